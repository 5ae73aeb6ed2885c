template <typename T>
T max_of(T a, T b)
{
    return a > b ? a : b;
}

template <class K, class V>
struct Pair {
    K key;
    V value;
    K first() const { return key; }
};
