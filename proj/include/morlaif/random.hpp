#ifndef MORLAIF_RANDOM_HPP_
#define MORLAIF_RANDOM_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace morlaif {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for a named sub-stream, e.g. derive_seed(seed, {kLabels, pair, principle}).
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(base);
  for (auto p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(base, path));
}

// Uniform in [0, 1) with 53 random bits. 1 - u is exact for every value.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline int uniform_index(Rng& rng, int n) {
  return std::uniform_int_distribution<int>(0, n - 1)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

// Stream tags so that stages never share random numbers.
enum StreamTag : std::uint64_t {
  kWorldStream = 1,
  kFeatureStream,
  kReferencePolicyStream,
  kPairStream,
  kPrincipleLabelStream,
  kConstitutionStream,
  kJudgeStream,
  kBootstrapStream,
  kProjectionStream,
  kPpoStream,
  kWinRateStream,
  kServiceStream,
};

}  // namespace morlaif

#endif  // MORLAIF_RANDOM_HPP_
