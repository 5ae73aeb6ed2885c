#include "widget.h"

Widget::Widget(int w)
    : width_(w),
      height_(w * 2)
{
}

int Widget::area() const
{
    return width_ * height_;
}

ns::Box::~Box() { release(); }
