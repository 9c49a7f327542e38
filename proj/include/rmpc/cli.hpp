#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "rmpc/ensemble.hpp"
#include "rmpc/linalg.hpp"
#include "rmpc/montecarlo.hpp"
#include "rmpc/sgd.hpp"

namespace rmpc::cli {

inline constexpr const char* kSchemaVersion = "rmpc-config/1";

inline constexpr int kExitOk = 0;
inline constexpr int kExitViolation = 1;
inline constexpr int kExitUsage = 2;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SyntheticRows {
  std::size_t dim = 0;
  std::size_t rows = 0;
  std::uint64_t seed = 0;
  friend bool operator==(const SyntheticRows&, const SyntheticRows&) = default;
};

struct AtomSpec {
  std::vector<Vector> matrix;
  double probability = 0.0;
  friend bool operator==(const AtomSpec&, const AtomSpec&) = default;
};

struct EnsembleSpec {
  EnsembleKind kind = EnsembleKind::FiniteSupport;
  std::vector<AtomSpec> atoms;
  std::vector<Vector> rows;
  std::optional<SyntheticRows> synthetic;
  std::size_t dim = 0;
  friend bool operator==(const EnsembleSpec&, const EnsembleSpec&) = default;
};

struct GridSpec {
  double min = 0.0;
  double max = 1.0;
  std::size_t count = 41;
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct MartingaleSpec {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t depth = 3;
  std::size_t trajectories = 100;
  friend bool operator==(const MartingaleSpec&, const MartingaleSpec&) = default;
};

struct ProblemSpec {
  std::vector<Vector> rows;
  Vector x_star;
  std::optional<SyntheticRows> synthetic;
  std::optional<Vector> x0;
  double delta = 0.1;
  std::size_t runs = 1000;
  friend bool operator==(const ProblemSpec&, const ProblemSpec&) = default;
};

struct RunConfig {
  std::optional<EnsembleSpec> ensemble;
  std::optional<double> alpha;
  /// alpha = alpha_times_r / r
  std::optional<double> alpha_times_r;
  std::size_t n = 10;
  std::size_t trials = 10'000;
  std::optional<std::uint64_t> seed;
  GridSpec t_grid;
  NormKind norm = NormKind::Operator;
  std::optional<std::string> out;
  unsigned threads = 1;
  std::optional<double> sigma2_override;
  std::size_t c_samples = kDefaultCSamples;
  MartingaleSpec martingale;
  std::optional<ProblemSpec> kaczmarz;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Throws ConfigError on schema violations, including unknown keys.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
nlohmann::json to_json(const RunConfig& c);

Ensemble build_ensemble(const EnsembleSpec& spec);
LeastSquaresProblem build_problem(const ProblemSpec& spec);

/// Resolves alpha (explicit or as a fraction of 1/r) for a given radius.
double resolve_alpha(const RunConfig& c, double r);

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

int cmd_bound(const RunConfig& c, Streams io);
int cmd_verify(const RunConfig& c, Streams io, bool verbose = false);
int cmd_martingale(const RunConfig& c, Streams io);
int cmd_kaczmarz(const RunConfig& c, Streams io);

/// Full command-line entry point; returns the process exit code.
int run(const std::vector<std::string>& args, Streams io);

}  // namespace rmpc::cli
