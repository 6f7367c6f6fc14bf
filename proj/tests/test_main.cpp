#include <catch2/catch_amalgamated.hpp>

#include "tgda/runtime.hpp"

int main(int argc, char* argv[]) {
  tgda::runtime::tune_blas(argv);
  return Catch::Session().run(argc, argv);
}
