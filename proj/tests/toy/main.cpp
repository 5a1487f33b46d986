#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "gfd/log.hpp"

int main(int argc, char** argv) {
  gfd::log::init("warn");
  return doctest::Context(argc, argv).run();
}
