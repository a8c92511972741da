#include <cstdio>

int main() {
  std::puts("racestack CLI placeholder");
  return 0;
}
