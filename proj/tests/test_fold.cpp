#include <catch2/catch_amalgamated.hpp>

#include "tgda/fold.hpp"

using namespace tgda;

TEST_CASE("bn folding keeps lrnet18 logits within 1e-4") {
  auto rep = fold::fold_check<float>("lrnet18", 10, 64, 3, 3, 16);
  INFO("max deviation " << rep.max_abs_logit_dev);
  REQUIRE(rep.max_abs_logit_dev < 1e-4);
  REQUIRE(rep.norm_ops_after == 0);
  REQUIRE(rep.norm_ops_after < rep.norm_ops_before);
}

TEST_CASE("bn folding keeps vitfs_t logits within 1e-4") {
  auto rep = fold::fold_check<float>("vitfs_t", 10, 64, 4, 3, 8);
  INFO("max deviation " << rep.max_abs_logit_dev);
  REQUIRE(rep.max_abs_logit_dev < 1e-4);
  REQUIRE(rep.norm_ops_after == 0);
  REQUIRE(rep.norm_ops_after < rep.norm_ops_before);
}

TEST_CASE("bn folding keeps the pam teacher logits within 1e-4") {
  auto rep = fold::fold_check<float>("teacher_pam_lrnet18", 10, 64, 5, 3, 8);
  REQUIRE(rep.max_abs_logit_dev < 1e-4);
  REQUIRE(rep.norm_ops_after == 0);
}

TEST_CASE("folding reduces flops as well") {
  auto rep = fold::fold_check<float>("lrnet18", 10, 64, 6, 2, 2);
  REQUIRE(rep.flops_after < rep.flops_before);
}
