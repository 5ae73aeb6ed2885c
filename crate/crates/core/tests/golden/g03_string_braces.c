const char *open = "{";
const char *close = "}}";
char brace = '{';

void print_braces(void)
{
    puts("{ not a block }");
    putchar('}');
    puts("escaped \" { quote");
}
