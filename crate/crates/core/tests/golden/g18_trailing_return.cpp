auto square(int x) -> int
{
    return x * x;
}

auto name() -> const char * { return "n"; }

int deleted_fn() = delete;
virtual void pure() = 0;
