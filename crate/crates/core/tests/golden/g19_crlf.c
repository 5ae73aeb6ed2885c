int crlf_one(void)
{
    return 1;
}

int crlf_two(void) { return 2; }
