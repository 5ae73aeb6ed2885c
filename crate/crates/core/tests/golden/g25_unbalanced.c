int complete(void)
{
    return 1;
}

int broken(void)
{
    if (1) {
        return 2;
