#include <algorithm>
#include <vector>

auto global_lambda = [](int x) { return x + 1; };

void sort_desc(std::vector<int> &v)
{
    std::sort(v.begin(), v.end(), [](int a, int b) {
        return a > b;
    });
}
