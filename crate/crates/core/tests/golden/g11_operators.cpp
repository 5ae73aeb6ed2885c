struct Vec2 { float x, y; };

bool operator==(const Vec2 &a, const Vec2 &b)
{
    return a.x == b.x && a.y == b.y;
}

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }

struct Functor {
    int operator()(int v) const { return v * 3; }
};
