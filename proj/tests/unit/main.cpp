#include <gtest/gtest.h>

#include "cloudmamba/runtime.hpp"

int main(int argc, char** argv) {
  cloudmamba::configure_allocator();
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
