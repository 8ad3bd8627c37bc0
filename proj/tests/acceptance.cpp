#include <cstdio>
#include <exception>

#include <spdlog/spdlog.h>

#include "support/criteria.hpp"

int main() {
  spdlog::set_level(spdlog::level::warn);
  int failed = 0;
  for (const auto& c : dpguard::testing::primary_criteria()) {
    dpguard::testing::Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria failed\n", failed, dpguard::testing::primary_criteria().size());
  return failed ? 1 : 0;
}
