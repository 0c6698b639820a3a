#include <cstdio>

int main() {
  std::puts("lumvit-cli: not wired up yet");
  return 64;
}
