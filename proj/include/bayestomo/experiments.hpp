#pragma once

// Experiment configuration (JSON), orchestration of the four CLI commands and
// their file outputs. Every command is a pure function of the configuration
// and its seed.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "bayestomo/beams.hpp"
#include "bayestomo/errors.hpp"
#include "bayestomo/grid.hpp"
#include "bayestomo/inference.hpp"
#include "bayestomo/io.hpp"
#include "bayestomo/priors.hpp"
#include "bayestomo/resolution.hpp"

namespace bayestomo {

inline constexpr const char* kVersion = "1.0.0";

/// Malformed or inconsistent configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridSpec {
  Index nx = 30;
  Index ny = 30;
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;
  bool operator==(const GridSpec&) const = default;
};

struct ProjectionSpec {
  double angle = 0.0;
  int count = 5;
  bool operator==(const ProjectionSpec&) const = default;
};

struct BeamSpec {
  std::vector<ProjectionSpec> projections{{0.0, 5}, {std::numbers::pi / 2, 5}};
  int random = 0;
  std::string file;  // CSV x0,y0,x1,y1; replaces projections/random when set
  bool operator==(const BeamSpec&) const = default;
};

struct PhantomSpec {
  std::optional<std::array<double, 2>> center;  // defaults to the domain centre
  double width = 0.1;
  double amplitude = 1.0;
  bool operator==(const PhantomSpec&) const = default;
};

struct NoiseSpec {
  std::optional<double> sigma_eps;  // absolute; overrides relative
  double relative = 0.01;           // fraction of the peak noise-free projection
  bool operator==(const NoiseSpec&) const = default;
};

struct PriorSpec {
  std::string kind = "sqexp";  // sqexp | tikhonov0 | tikhonov2
  double mu = 0.0;
  double sigma_pr = 1.0;
  double d_corr = 0.1;
  double gamma = 1.0;
  std::optional<double> a;  // finite null-space augmentation for Tikhonov priors
  bool operator==(const PriorSpec&) const = default;
};

struct ResolutionSpec {
  ResolutionOptions options;
  bool prior_only = false;
  int image_bits = 8;
  bool operator==(const ResolutionSpec&) const = default;
};

struct ReconstructSpec {
  std::string measurements;  // one value per line; synthetic data when empty
  bool noise_free = false;
  bool operator==(const ReconstructSpec&) const = default;
};

struct SweepSpec {
  std::vector<int> counts{10, 20, 40, 80, 160};
  int repetitions = 3;
  Index probe_node = -1;  // -1: node nearest the domain centre
  std::vector<double> d_corr_values;  // empty: prior.d_corr only
  bool operator==(const SweepSpec&) const = default;
};

struct ValidateSpec {
  Index draws = 20000;
  double threshold = 0.05;
  bool operator==(const ValidateSpec&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";  // --out overrides
  GridSpec grid;
  BeamSpec beams;
  PhantomSpec phantom;
  NoiseSpec noise;
  PriorSpec prior;
  ResolutionSpec resolution;
  ReconstructSpec reconstruct;
  SweepSpec sweep;
  ValidateSpec validate;
  bool operator==(const ExperimentConfig&) const = default;
};

// --- JSON -------------------------------------------------------------------

namespace detail {

using json = nlohmann::json;

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
  return j.at(key);
}

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) ==
        allowed.end()) {
      throw ConfigError(std::string("unknown key '") + k + "' in " + where);
    }
  }
}

inline std::string mode_name(AmplitudeMode m) { return m == AmplitudeMode::squared ? "squared" : "sqrt"; }

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using json = nlohmann::json;
  json projections = json::array();
  for (const auto& p : c.beams.projections) projections.push_back({{"angle", p.angle}, {"count", p.count}});
  json phantom = {{"width", c.phantom.width}, {"amplitude", c.phantom.amplitude}};
  phantom["center"] = c.phantom.center ? json(*c.phantom.center) : json(nullptr);
  json noise = {{"relative", c.noise.relative}};
  noise["sigma_eps"] = c.noise.sigma_eps ? json(*c.noise.sigma_eps) : json(nullptr);
  json prior = {{"kind", c.prior.kind}, {"mu", c.prior.mu}, {"sigma_pr", c.prior.sigma_pr},
                {"d_corr", c.prior.d_corr}, {"gamma", c.prior.gamma}};
  prior["a"] = c.prior.a ? json(*c.prior.a) : json(nullptr);
  const auto& ro = c.resolution.options;
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"grid",
       {{"nx", c.grid.nx}, {"ny", c.grid.ny}, {"x_min", c.grid.x_min}, {"x_max", c.grid.x_max},
        {"y_min", c.grid.y_min}, {"y_max", c.grid.y_max}}},
      {"beams", {{"projections", projections}, {"random", c.beams.random}, {"file", c.beams.file}}},
      {"phantom", phantom},
      {"noise", noise},
      {"prior", prior},
      {"resolution",
       {{"alpha_th", ro.alpha_th}, {"pad_factor", ro.pad_factor}, {"n_angles", ro.n_angles},
        {"amplitude_mode", detail::mode_name(ro.mode)}, {"window", ro.window},
        {"prior_only", c.resolution.prior_only}, {"image_bits", c.resolution.image_bits}}},
      {"reconstruct",
       {{"measurements", c.reconstruct.measurements}, {"noise_free", c.reconstruct.noise_free}}},
      {"sweep",
       {{"counts", c.sweep.counts}, {"repetitions", c.sweep.repetitions},
        {"probe_node", c.sweep.probe_node}, {"d_corr_values", c.sweep.d_corr_values}}},
      {"validate", {{"draws", c.validate.draws}, {"threshold", c.validate.threshold}}},
  };
}

/// Range checks mirroring the preconditions of the library operations.
inline void validate_config(const ExperimentConfig& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(!c.output_dir.empty(), "output_dir must not be empty");
  require(c.grid.nx >= 2 && c.grid.ny >= 2, "grid: nx and ny must be >= 2");
  require(c.grid.x_max > c.grid.x_min && c.grid.y_max > c.grid.y_min, "grid: empty domain");
  for (const auto& p : c.beams.projections) require(p.count >= 1, "beams: projection count must be >= 1");
  require(c.beams.random >= 0, "beams: random must be >= 0");
  require(c.beams.file.size() > 0 || !c.beams.projections.empty() || c.beams.random > 0,
          "beams: no beams configured");
  require(c.phantom.width > 0.0, "phantom: width must be positive");
  require(!c.noise.sigma_eps || *c.noise.sigma_eps > 0.0, "noise: sigma_eps must be positive");
  require(c.noise.relative > 0.0, "noise: relative must be positive");
  require(c.prior.kind == "sqexp" || c.prior.kind == "tikhonov0" || c.prior.kind == "tikhonov2",
          "prior: kind must be sqexp, tikhonov0 or tikhonov2");
  require(c.prior.sigma_pr > 0.0 && c.prior.d_corr > 0.0, "prior: sigma_pr and d_corr must be positive");
  require(c.prior.gamma > 0.0, "prior: gamma must be positive");
  require(!c.prior.a || *c.prior.a > 0.0, "prior: a must be positive");
  require(c.prior.kind != "tikhonov2" || (c.grid.nx >= 3 && c.grid.ny >= 3),
          "prior: tikhonov2 needs nx, ny >= 3");
  const auto& ro = c.resolution.options;
  require(ro.alpha_th > 0.0 && ro.alpha_th < 1.0, "resolution: alpha_th must lie in (0, 1)");
  require(ro.pad_factor >= 1, "resolution: pad_factor must be >= 1");
  require(ro.n_angles >= 1, "resolution: n_angles must be >= 1");
  require(c.resolution.image_bits == 8 || c.resolution.image_bits == 16,
          "resolution: image_bits must be 8 or 16");
  require(c.sweep.repetitions >= 1, "sweep: repetitions must be >= 1");
  for (int n : c.sweep.counts) require(n >= 0, "sweep: counts must be >= 0");
  require(c.sweep.probe_node >= -1 && c.sweep.probe_node < c.grid.nx * c.grid.ny,
          "sweep: probe_node out of range");
  for (double d : c.sweep.d_corr_values) require(d > 0.0, "sweep: d_corr_values must be positive");
  require(c.validate.draws >= 2, "validate: draws must be >= 2");
  require(c.validate.threshold > 0.0, "validate: threshold must be positive");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  using detail::section;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::check_keys(j, {"seed", "output_dir", "grid", "beams", "phantom", "noise", "prior", "resolution",
                         "reconstruct", "sweep", "validate"},
                     "config");
  ExperimentConfig c;
  read_opt(j, "seed", c.seed);
  read_opt(j, "output_dir", c.output_dir);

  const auto& g = section(j, "grid");
  detail::check_keys(g, {"nx", "ny", "x_min", "x_max", "y_min", "y_max"}, "grid");
  read_opt(g, "nx", c.grid.nx);
  read_opt(g, "ny", c.grid.ny);
  read_opt(g, "x_min", c.grid.x_min);
  read_opt(g, "x_max", c.grid.x_max);
  read_opt(g, "y_min", c.grid.y_min);
  read_opt(g, "y_max", c.grid.y_max);

  const auto& b = section(j, "beams");
  detail::check_keys(b, {"projections", "random", "file"}, "beams");
  if (b.contains("projections")) {
    if (!b.at("projections").is_array()) throw ConfigError("beams.projections must be an array");
    c.beams.projections.clear();
    for (const auto& p : b.at("projections")) {
      ProjectionSpec ps;
      read_opt(p, "angle", ps.angle);
      read_opt(p, "count", ps.count);
      c.beams.projections.push_back(ps);
    }
  }
  read_opt(b, "random", c.beams.random);
  read_opt(b, "file", c.beams.file);

  const auto& ph = section(j, "phantom");
  detail::check_keys(ph, {"center", "width", "amplitude"}, "phantom");
  if (ph.contains("center") && !ph.at("center").is_null()) {
    std::array<double, 2> ctr{};
    read_opt(ph, "center", ctr);
    c.phantom.center = ctr;
  }
  read_opt(ph, "width", c.phantom.width);
  read_opt(ph, "amplitude", c.phantom.amplitude);

  const auto& n = section(j, "noise");
  detail::check_keys(n, {"sigma_eps", "relative"}, "noise");
  if (n.contains("sigma_eps") && !n.at("sigma_eps").is_null()) {
    double s = 0.0;
    read_opt(n, "sigma_eps", s);
    c.noise.sigma_eps = s;
  }
  read_opt(n, "relative", c.noise.relative);

  const auto& p = section(j, "prior");
  detail::check_keys(p, {"kind", "mu", "sigma_pr", "d_corr", "gamma", "a"}, "prior");
  read_opt(p, "kind", c.prior.kind);
  read_opt(p, "mu", c.prior.mu);
  read_opt(p, "sigma_pr", c.prior.sigma_pr);
  read_opt(p, "d_corr", c.prior.d_corr);
  read_opt(p, "gamma", c.prior.gamma);
  if (p.contains("a") && !p.at("a").is_null()) {
    double a = 0.0;
    read_opt(p, "a", a);
    c.prior.a = a;
  }

  const auto& r = section(j, "resolution");
  detail::check_keys(r, {"alpha_th", "pad_factor", "n_angles", "amplitude_mode", "window",
                         "prior_only", "image_bits"},
                     "resolution");
  auto& ro = c.resolution.options;
  read_opt(r, "alpha_th", ro.alpha_th);
  read_opt(r, "pad_factor", ro.pad_factor);
  read_opt(r, "n_angles", ro.n_angles);
  std::string mode = detail::mode_name(ro.mode);
  read_opt(r, "amplitude_mode", mode);
  if (mode == "squared") {
    ro.mode = AmplitudeMode::squared;
  } else if (mode == "sqrt") {
    ro.mode = AmplitudeMode::sqrt;
  } else {
    throw ConfigError("resolution.amplitude_mode must be 'squared' or 'sqrt'");
  }
  read_opt(r, "window", ro.window);
  read_opt(r, "prior_only", c.resolution.prior_only);
  read_opt(r, "image_bits", c.resolution.image_bits);

  const auto& rc = section(j, "reconstruct");
  detail::check_keys(rc, {"measurements", "noise_free"}, "reconstruct");
  read_opt(rc, "measurements", c.reconstruct.measurements);
  read_opt(rc, "noise_free", c.reconstruct.noise_free);

  const auto& s = section(j, "sweep");
  detail::check_keys(s, {"counts", "repetitions", "probe_node", "d_corr_values"}, "sweep");
  read_opt(s, "counts", c.sweep.counts);
  read_opt(s, "repetitions", c.sweep.repetitions);
  read_opt(s, "probe_node", c.sweep.probe_node);
  read_opt(s, "d_corr_values", c.sweep.d_corr_values);

  const auto& v = section(j, "validate");
  detail::check_keys(v, {"draws", "threshold"}, "validate");
  read_opt(v, "draws", c.validate.draws);
  read_opt(v, "threshold", c.validate.threshold);

  validate_config(c);
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline std::string serialize_config(const ExperimentConfig& c) { return to_json(c).dump(2); }

/// Reads a config file; relative file references are resolved against the
/// config's directory and must exist.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str());
  const auto base = path.parent_path();
  for (std::string* ref : {&c.beams.file, &c.reconstruct.measurements}) {
    if (ref->empty()) continue;
    std::filesystem::path p(*ref);
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw ConfigError("referenced file '" + p.string() + "' does not exist");
    *ref = p.string();
  }
  return c;
}

/// 64-bit FNV-1a of the canonical serialized configuration, as hex.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::vector<std::string> output_header(const ExperimentConfig& c) {
  return {std::string("bayestomo ") + kVersion, "config_hash " + config_hash(c),
          "seed " + std::to_string(c.seed)};
}

// --- experiment assembly ----------------------------------------------------

inline Grid make_grid(const ExperimentConfig& c) {
  return {Domain(c.grid.x_min, c.grid.x_max, c.grid.y_min, c.grid.y_max), c.grid.nx, c.grid.ny};
}

/// Configured beams: the CSV file if given, else the parallel projections
/// followed by random chords drawn with the config seed.
inline BeamSet make_beams(const ExperimentConfig& c, const Domain& domain) {
  if (!c.beams.file.empty()) {
    auto in = io::open_in(c.beams.file);
    BeamSet b = io::read_beams(in);
    if (b.empty()) throw ConfigError("beam file is empty");
    return b;
  }
  BeamSet beams;
  for (const auto& p : c.beams.projections) {
    auto proj = parallel_projection(domain, p.angle, p.count);
    beams.insert(beams.end(), proj.begin(), proj.end());
  }
  auto extra = random_beams(domain, c.beams.random, c.seed);
  beams.insert(beams.end(), extra.begin(), extra.end());
  if (beams.empty()) throw ConfigError("no beams configured");
  return beams;
}

inline Field make_phantom(const ExperimentConfig& c, const Grid& grid) {
  const Point center = c.phantom.center ? Point((*c.phantom.center)[0], (*c.phantom.center)[1])
                                        : grid.domain().center();
  return gaussian_phantom(grid, center, c.phantom.width, c.phantom.amplitude);
}

/// Absolute sigma_eps, or the configured fraction of the peak noise-free
/// projection of the phantom through the given beams.
inline double noise_sigma(const ExperimentConfig& c, const SensitivityMatrix& A, const Field& phantom) {
  if (c.noise.sigma_eps) return *c.noise.sigma_eps;
  const double peak = project(A, phantom).cwiseAbs().maxCoeff();
  if (!(peak > 0.0)) throw ConfigError("noise: relative noise needs a nonzero noise-free projection");
  return c.noise.relative * peak;
}

inline GaussianPrior make_prior(const PriorSpec& p, const Grid& grid) {
  if (p.kind == "sqexp") return squared_exponential_prior(grid, p.mu, p.sigma_pr, p.d_corr);
  const Eigen::MatrixXd op =
      p.kind == "tikhonov2" ? laplacian_operator(grid) : identity_operator(grid.size());
  return GaussianPrior::tikhonov(op, p.gamma);
}

/// Proper prior used to propagate moments: the squared-exponential prior
/// itself, or the null-space-augmented Tikhonov covariance when a is set or
/// the null space is empty.
inline std::optional<GaussianPrior> proper_prior(const PriorSpec& spec, const GaussianPrior& prior) {
  if (prior.is_proper()) return prior;
  if (spec.a) return augmented_tikhonov_prior(prior, *spec.a);
  if (prior.nullspace().cols() == 0) return augmented_tikhonov_prior(prior, 1.0);
  return std::nullopt;
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  return (da * db).sum() / std::sqrt((da * da).sum() * (db * db).sum());
}

inline double frobenius_relative_error(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& reference) {
  return (estimate - reference).norm() / reference.norm();
}

namespace detail {

inline std::filesystem::path prepare_out(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// --- reconstruct --------------------------------------------------------------

struct ReconstructResult {
  Eigen::VectorXd measurements;
  Eigen::VectorXd map;
  Eigen::VectorXd variance;
  Field phantom;
};

/// MAP estimate and posterior variance. Synthetic measurements follow
/// b = A x_phantom - eps with eps drawn from the noise model.
inline ReconstructResult cmd_reconstruct(const ExperimentConfig& c, const std::filesystem::path& out_dir) {
  const Grid grid = make_grid(c);
  const BeamSet beams = make_beams(c, grid.domain());
  const auto A = assemble_sensitivity(grid, beams);
  Field phantom = make_phantom(c, grid);
  const auto noise = NoiseModel::iid(A.rows(), noise_sigma(c, A, phantom));
  const auto prior = make_prior(c.prior, grid);

  Eigen::VectorXd b;
  if (!c.reconstruct.measurements.empty()) {
    auto in = io::open_in(c.reconstruct.measurements);
    b = io::read_vector(in);
    if (b.size() != A.rows()) {
      throw ConfigError("measurement file has " + std::to_string(b.size()) + " values, expected " +
                        std::to_string(A.rows()));
    }
  } else {
    b = project(A, phantom);
    if (!c.reconstruct.noise_free) b -= sample_noise(noise, 1, c.seed).col(0);
  }

  const auto post = posterior(A.A, noise, prior, b);
  ReconstructResult r{b, post.mean, post.covariance.diagonal(), std::move(phantom)};

  const auto dir = detail::prepare_out(out_dir);
  const auto header = output_header(c);
  {
    auto f = io::open_out((dir / "map_estimate.csv").string());
    io::write_node_values(f, grid, r.map, "value", header);
  }
  {
    auto f = io::open_out((dir / "map_estimate.pgm").string(), true);
    io::write_pgm(f, grid, r.map, c.resolution.image_bits);
  }
  {
    auto f = io::open_out((dir / "posterior_variance.csv").string());
    io::write_node_values(f, grid, r.variance, "variance", header);
  }
  {
    auto f = io::open_out((dir / "measurements.csv").string());
    io::write_matrix(f, r.measurements, header);
  }
  {
    auto f = io::open_out((dir / "beams.csv").string());
    io::write_beams(f, beams, header);
  }
  return r;
}

// --- resolution map -----------------------------------------------------------

struct ResolutionMapResult {
  ResolutionField field;
  MapCovarianceMode mode = MapCovarianceMode::proper;
  bool prior_only = false;
};

/// Covariance whose columns are analysed: the prior covariance in prior-only
/// mode, Gamma_MAP for proper priors, and the a -> infinity limit for
/// Tikhonov priors with a constant null space and no finite a.
inline MapCovariance resolution_covariance(const ExperimentConfig& c, const Grid& grid,
                                           const SensitivityMatrix& A, const NoiseModel& noise) {
  const auto prior = make_prior(c.prior, grid);
  const auto proper = proper_prior(c.prior, prior);
  if (c.resolution.prior_only) {
    if (!proper) throw ConfigError("prior_only needs a proper prior (set prior.a for Tikhonov kinds)");
    return {proper->covariance(), proper->mean(), MapCovarianceMode::proper};
  }
  if (proper) return map_covariance(A.A, noise, *proper);
  return tikhonov_limit_covariance(A.A, noise, prior);
}

inline void write_resolution_field(std::ostream& out, const Grid& grid, const ResolutionField& f,
                                   const std::vector<std::string>& header) {
  io::write_comment(out, header);
  out << "node_index,x,y,f_c,delta,flag\n";
  for (Index j = 0; j < grid.size(); ++j) {
    const Point p = grid.node(j);
    out << j << ',' << io::format_double(p.x()) << ',' << io::format_double(p.y()) << ','
        << io::format_double(f.f_c[j]) << ',' << io::format_double(f.delta[j]) << ','
        << to_string(f.flags[static_cast<std::size_t>(j)]) << '\n';
  }
}

inline ResolutionMapResult cmd_resolution_map(const ExperimentConfig& c,
                                              const std::filesystem::path& out_dir) {
  const Grid grid = make_grid(c);
  const BeamSet beams = make_beams(c, grid.domain());
  const auto A = assemble_sensitivity(grid, beams);
  const auto noise = NoiseModel::iid(A.rows(), noise_sigma(c, A, make_phantom(c, grid)));
  const auto cov = resolution_covariance(c, grid, A, noise);

  ResolutionMapResult r;
  r.field = resolution_field(grid, cov.covariance, c.resolution.options);
  r.mode = cov.mode;
  r.prior_only = c.resolution.prior_only;

  const auto dir = detail::prepare_out(out_dir);
  auto header = output_header(c);
  header.push_back(std::string("covariance ") +
                   (r.prior_only ? "prior"
                    : r.mode == MapCovarianceMode::proper ? "map"
                                                          : "map_tikhonov_limit") +
                   " threshold " + io::format_double(r.field.threshold_used));
  {
    auto f = io::open_out((dir / "resolution.csv").string());
    write_resolution_field(f, grid, r.field, header);
  }
  {
    auto f = io::open_out((dir / "resolution.pgm").string(), true);
    io::write_pgm(f, grid, r.field.delta, c.resolution.image_bits);
  }
  {
    auto f = io::open_out((dir / "fc.csv").string());
    io::write_node_values(f, grid, r.field.f_c, "f_c", header);
  }
  return r;
}

// --- sweep ----------------------------------------------------------------------

struct SweepRow {
  double d_corr = 0.0;
  int count = 0;
  int repetition = 0;
  std::uint64_t seed = 0;
  double delta = 0.0;
  double delta_prior = 0.0;
  std::string flag;
};

struct SweepSummary {
  double d_corr = 0.0;
  int count = 0;
  double delta_mean = 0.0;
  double delta_min = 0.0;
  double delta_max = 0.0;
  double delta_prior = 0.0;
};

struct SweepResult {
  Index probe_node = 0;
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> summary;
};

/// Resolution at the probe node as beams are added. Each count uses the
/// configured base array (truncated when the count is smaller) plus random
/// chords up to the count; count 0 falls back to the prior resolution. The
/// noise level is fixed from the base array so that only the beam count varies.
inline SweepResult cmd_sweep(const ExperimentConfig& c, const std::filesystem::path& out_dir) {
  const Grid grid = make_grid(c);
  const BeamSet base = make_beams(c, grid.domain());
  const Field phantom = make_phantom(c, grid);
  const double sigma = noise_sigma(c, assemble_sensitivity(grid, base), phantom);

  SweepResult result;
  result.probe_node = c.sweep.probe_node >= 0 ? c.sweep.probe_node
                                              : grid.nearest_node(grid.domain().center());
  std::vector<double> d_values = c.sweep.d_corr_values;
  if (d_values.empty()) d_values.push_back(c.prior.d_corr);
  std::vector<int> counts = c.sweep.counts;
  std::sort(counts.begin(), counts.end());

  for (const double d_corr : d_values) {
    PriorSpec ps = c.prior;
    ps.d_corr = d_corr;
    const auto built = make_prior(ps, grid);
    const auto prior = proper_prior(ps, built);
    if (!prior) throw ConfigError("sweep needs a proper prior (set prior.a for Tikhonov kinds)");
    const auto prior_res = resolution_at(grid, prior->covariance(), result.probe_node,
                                         c.resolution.options);
    for (const int count : counts) {
      SweepSummary s{d_corr, count, 0.0, std::numeric_limits<double>::infinity(),
                     -std::numeric_limits<double>::infinity(), prior_res.delta};
      for (int rep = 0; rep < c.sweep.repetitions; ++rep) {
        const std::uint64_t seed = detail::mix_seed(c.seed, static_cast<std::uint64_t>(count),
                                                    static_cast<std::uint64_t>(rep));
        SweepRow row{d_corr, count, rep, seed, prior_res.delta, prior_res.delta, "prior_only"};
        if (count > 0) {
          BeamSet beams(base.begin(), base.begin() + std::min<std::size_t>(base.size(), count));
          if (static_cast<std::size_t>(count) > base.size()) {
            auto extra = random_beams(grid.domain(), count - static_cast<int>(base.size()), seed);
            beams.insert(beams.end(), extra.begin(), extra.end());
          }
          const auto A = assemble_sensitivity(grid, beams);
          const auto cov = map_covariance(A.A, NoiseModel::iid(A.rows(), sigma), *prior);
          const auto r = resolution_at(grid, cov.covariance, result.probe_node, c.resolution.options);
          row.delta = r.delta;
          row.flag = std::string(to_string(r.flag));
        }
        s.delta_mean += row.delta / c.sweep.repetitions;
        s.delta_min = std::min(s.delta_min, row.delta);
        s.delta_max = std::max(s.delta_max, row.delta);
        result.rows.push_back(row);
      }
      result.summary.push_back(s);
    }
  }

  const auto dir = detail::prepare_out(out_dir);
  auto header = output_header(c);
  header.push_back("probe_node " + std::to_string(result.probe_node));
  {
    auto f = io::open_out((dir / "sweep.csv").string());
    io::write_comment(f, header);
    f << "d_corr,count,repetition,seed,delta,delta_prior,flag\n";
    for (const auto& r : result.rows) {
      f << io::format_double(r.d_corr) << ',' << r.count << ',' << r.repetition << ',' << r.seed
        << ',' << io::format_double(r.delta) << ',' << io::format_double(r.delta_prior) << ','
        << r.flag << '\n';
    }
  }
  {
    auto f = io::open_out((dir / "sweep_summary.csv").string());
    io::write_comment(f, header);
    f << "d_corr,count,delta_mean,delta_min,delta_max,delta_prior\n";
    for (const auto& s : result.summary) {
      f << io::format_double(s.d_corr) << ',' << s.count << ',' << io::format_double(s.delta_mean)
        << ',' << io::format_double(s.delta_min) << ',' << io::format_double(s.delta_max) << ','
        << io::format_double(s.delta_prior) << '\n';
    }
  }
  return result;
}

// --- Monte Carlo validation ---------------------------------------------------

inline constexpr Index kMinPoweredDraws = 1000;

struct ValidationReport {
  Index draws = 0;
  double threshold = 0.05;
  double gamma_b_error = 0.0;
  double gamma_map_error = 0.0;
  bool underpowered = false;

  bool gamma_b_pass() const { return gamma_b_error < threshold; }
  bool gamma_map_pass() const { return gamma_map_error < threshold; }
};

/// Draws (x, eps) from prior and noise, forms b = A x - eps and compares the
/// sample covariances of b and of the per-draw MAP (stacked least squares)
/// with the closed-form Gamma_b and Gamma_MAP.
inline ValidationReport monte_carlo_validation(const Eigen::MatrixXd& A, const NoiseModel& noise,
                                               const GaussianPrior& prior, Index draws,
                                               std::uint64_t seed, double threshold = 0.05) {
  if (!prior.is_proper()) throw UnsupportedPriorError("Monte Carlo validation needs a proper prior");
  const Eigen::MatrixXd x = sample_prior(prior, draws, detail::mix_seed(seed, 0, 1));
  const Eigen::MatrixXd eps = sample_noise(noise, draws, detail::mix_seed(seed, 0, 2));
  const Eigen::MatrixXd b = A * x - eps;
  const Eigen::MatrixXd x_map = MapSolver(A, noise, prior).solve_many(b);

  ValidationReport r;
  r.draws = draws;
  r.threshold = threshold;
  r.gamma_b_error = frobenius_relative_error(sample_covariance(b), prior_predictive(A, noise, prior).covariance);
  r.gamma_map_error = frobenius_relative_error(sample_covariance(x_map), map_covariance(A, noise, prior).covariance);
  r.underpowered = draws < kMinPoweredDraws;
  return r;
}

inline ValidationReport cmd_validate(const ExperimentConfig& c, const std::filesystem::path& out_dir) {
  const Grid grid = make_grid(c);
  const BeamSet beams = make_beams(c, grid.domain());
  const auto A = assemble_sensitivity(grid, beams);
  const auto noise = NoiseModel::iid(A.rows(), noise_sigma(c, A, make_phantom(c, grid)));
  const auto built = make_prior(c.prior, grid);
  const auto prior = proper_prior(c.prior, built);
  if (!prior) throw ConfigError("validate needs a proper prior (set prior.a for Tikhonov kinds)");
  const auto r = monte_carlo_validation(A.A, noise, *prior, c.validate.draws, c.seed, c.validate.threshold);

  const auto dir = detail::prepare_out(out_dir);
  auto f = io::open_out((dir / "montecarlo_report.csv").string());
  io::write_comment(f, output_header(c));
  if (r.underpowered) {
    io::write_comment(f, {"warning: fewer than " + std::to_string(kMinPoweredDraws) +
                          " draws, errors are underpowered"});
  }
  f << "quantity,draws,frobenius_rel_error,threshold,status\n";
  auto status = [&](bool pass) { return r.underpowered ? "underpowered" : pass ? "pass" : "fail"; };
  f << "Gamma_b," << r.draws << ',' << io::format_double(r.gamma_b_error) << ','
    << io::format_double(r.threshold) << ',' << status(r.gamma_b_pass()) << '\n';
  f << "Gamma_MAP," << r.draws << ',' << io::format_double(r.gamma_map_error) << ','
    << io::format_double(r.threshold) << ',' << status(r.gamma_map_pass()) << '\n';
  return r;
}

/// Process exit code for an exception escaping a command: 2 for configuration
/// and argument problems, 3 for numerical failures, 1 otherwise.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const ConfigError*>(&e) != nullptr ||
      dynamic_cast<const std::invalid_argument*>(&e) != nullptr ||
      dynamic_cast<const DomainError*>(&e) != nullptr) {
    return 2;
  }
  return 1;
}

}  // namespace bayestomo
