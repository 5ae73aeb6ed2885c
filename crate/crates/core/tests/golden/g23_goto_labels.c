int with_cleanup(int *buf)
{
    int rc = -1;
    if (!buf)
        goto out;
    do {
        rc = 0;
    } while (0);
out:
    return rc;
}

void empty_body(void) {}
void also_empty(void)
{
}
