#include <cstdio>
int main() { std::puts("fraclab: stub"); return 0; }
