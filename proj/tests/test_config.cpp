#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "qcmp/config.hpp"

using namespace qcmp;

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults cover the documented keys") {
  Config cfg = Config::defaults();
  CHECK(cfg.get_real("alpha") == 0.2);
  CHECK(cfg.get_real("beta") == 0.05);
  CHECK(cfg.get_real("q_temp") == 0.5);
  CHECK(cfg.get_real("sim_temp") == 1.0);
  CHECK_FALSE(cfg.get_bool("symmetric_cl"));
  CHECK(cfg.get_int("embed_dim") == 64);
  CHECK(cfg.get_int("stage1_K") == 30);
  CHECK(cfg.get_int("stage2_K") == 10);
  CHECK(cfg.get_real("sim_threshold") == 0.2);
  CHECK(cfg.get_int("batch_size") == 256);
  CHECK(cfg.get_real("learning_rate") == 0.001);
  CHECK(cfg.get_int("max_raw_len") == 50);
  CHECK(cfg.get_int("max_aug_len") == 60);
  CHECK(cfg.get_int("max_insert") == 5);
  CHECK(cfg.get_int("eval_negatives") == 99);
  CHECK(cfg.get_real("corrupt_keep") == 0.4);
  CHECK(cfg.get_real("corrupt_delete") == 0.5);
  CHECK(cfg.get_real("corrupt_insert") == 0.1);
}

TEST_CASE("empty file keeps every default") {
  Config cfg = Config::defaults();
  cfg.load_text("", "test");
  CHECK(cfg == Config::defaults());
}

TEST_CASE("override changes exactly one key") {
  Config cfg = Config::defaults();
  cfg.apply_override("alpha=0.5");
  CHECK(cfg.get_real("alpha") == 0.5);
  Config defaults = Config::defaults();
  CHECK(cfg.get_real("beta") == defaults.get_real("beta"));
}

TEST_CASE("unknown keys and type mismatches are rejected by name") {
  Config cfg = Config::defaults();
  CHECK_THROWS_WITH_AS(cfg.apply_override("no_such_key=1"),
                       doctest::Contains("no_such_key"), std::runtime_error);
  CHECK_THROWS_WITH_AS(cfg.apply_override("batch_size=abc"), doctest::Contains("batch_size"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(cfg.apply_override("symmetric_cl=2.5"),
                       doctest::Contains("symmetric_cl"), std::runtime_error);
}

TEST_CASE("snapshot round-trips to the identical config") {
  Config cfg = Config::defaults();
  cfg.apply_override("alpha=0.7");
  cfg.apply_override("variant=wo_qa");
  cfg.apply_override("symmetric_cl=true");
  Config reloaded = Config::defaults();
  reloaded.load_text(cfg.snapshot(), "snapshot");
  CHECK(reloaded == cfg);
}

TEST_CASE("comments and blank lines parse") {
  Config cfg = Config::defaults();
  cfg.load_text("# a comment\n\nalpha = 0.3  # trailing\n", "test");
  CHECK(cfg.get_real("alpha") == 0.3);
}

TEST_SUITE_END();
