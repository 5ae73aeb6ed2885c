int classify(char c)
{
    if (c == '{') return 1;
    if (c == '}') return 2;
    if (c == '\'') return 3;
    if (c == '"') return 4;
    return 0;
}

int digits(void) { return 1'000 + 0x1'F; }
