#include <cstdio>

int main() {
    std::puts("inspex: placeholder");
    return 0;
}
