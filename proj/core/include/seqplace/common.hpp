#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqplace {

/** Base error for everything thrown by this library. */
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/** Bad configuration or bad arguments: wrong shapes, invalid settings, unknown keys. */
class ConfigError : public Error {
 public:
  using Error::Error;
};

/** Bad input data: missing files, malformed records, inconsistent inputs. */
class DataError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing / seed derivation

uint64_t splitmix64(uint64_t x);

// Combines a seed with a stream id so sub-generators are decorrelated but
// reproducible from the master seed alone.
uint64_t mix_seed(uint64_t seed, uint64_t stream);
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b);

// FNV-1a over raw bytes, used for input fingerprints in run manifests.
uint64_t fnv1a(const void* data, std::size_t size);
uint64_t fnv1a_file(const std::string& path);  // throws DataError if unreadable

// ---------------------------------------------------------------------------
// Random numbers
//
// std::mt19937_64 is bit-stable across platforms; the distributions below are
// implemented here because the standard library ones are not. Every piece of
// randomness in the library flows through this class.

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection-sampled so the result is exact.
  std::size_t uniform_index(std::size_t n);

  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  // k distinct elements drawn from pool, order randomized.
  template <typename T>
  std::vector<T> sample(std::vector<T> pool, std::size_t k) {
    if (k > pool.size()) {
      throw ConfigError("sample: requested " + std::to_string(k) +
                        " from pool of " + std::to_string(pool.size()));
    }
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(pool[i], pool[i + uniform_index(pool.size() - i)]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Logging (level picked up from SEQPLACE_LOG: debug|info|warn|error)

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

LogLevel log_level();
void log(LogLevel level, const std::string& msg);

inline void log_debug(const std::string& m) { log(LogLevel::Debug, m); }
inline void log_info(const std::string& m) { log(LogLevel::Info, m); }
inline void log_warn(const std::string& m) { log(LogLevel::Warn, m); }
inline void log_error(const std::string& m) { log(LogLevel::Error, m); }

// ---------------------------------------------------------------------------
// Coarse-grained parallel fan-out.
//
// Runs fn(i) for i in [0, n). Each index is processed by exactly one thread
// and writes only its own outputs, so results do not depend on the worker
// count. workers <= 1 runs inline.

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace seqplace
