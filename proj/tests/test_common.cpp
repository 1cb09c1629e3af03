#include <atomic>
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "seqplace/common.hpp"

using namespace seqplace;

TEST_CASE("fnv1a matches the published 64-bit vectors") {
  CHECK(fnv1a("", 0) == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("foobar", 6) == 0x85944171f73967e8ull);
}

TEST_CASE("fnv1a_file equals fnv1a over the file bytes") {
  const std::string path = "fnv_test.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "hello fnv";
  }
  CHECK(fnv1a_file(path) == fnv1a("hello fnv", 9));
  std::remove(path.c_str());
  CHECK_THROWS_AS(fnv1a_file("does_not_exist.bin"), DataError);
}

TEST_CASE("mix_seed decorrelates streams but stays reproducible") {
  CHECK(mix_seed(1, 0) == mix_seed(1, 0));
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(1, 2, 3) == mix_seed(mix_seed(1, 2), 3));
}

TEST_CASE("rng reproduces from seed and respects ranges") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const std::size_t idx = r.uniform_index(17);
    CHECK(idx < 17);
  }
  CHECK_THROWS_AS(r.uniform_index(0), ConfigError);
}

TEST_CASE("rng shuffle is a permutation and sample draws distinct items") {
  Rng r(9);
  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  std::set<int> seen(v.begin(), v.end());
  CHECK(seen.size() == 8);

  const std::vector<int> pool = {1, 2, 3, 4, 5};
  const auto picked = r.sample(pool, 3);
  CHECK(picked.size() == 3);
  CHECK(std::set<int>(picked.begin(), picked.end()).size() == 3);
  CHECK_THROWS_AS(r.sample(pool, 6), ConfigError);
}

TEST_CASE("parallel_for runs each index exactly once for any worker count") {
  for (int workers : {1, 4}) {
    std::vector<std::atomic<int>> hits(257);
    for (auto& h : hits) h = 0;
    parallel_for(hits.size(), workers, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h == 1);
  }
  parallel_for(0, 4, [&](std::size_t) { CHECK(false); });
}
