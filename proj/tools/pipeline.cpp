#include "romcex/pipeline.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "romcex/bayes.hpp"
#include "romcex/darcy.hpp"
#include "romcex/error.hpp"
#include "romcex/io.hpp"
#include "romcex/parallel.hpp"
#include "romcex/parametric_map.hpp"
#include "romcex/random.hpp"
#include "romcex/rom.hpp"
#include "romcex/snapshots.hpp"
#include "romcex/uq.hpp"

namespace romcex::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream tags for pipeline-level draws; the library modules own the rest.
constexpr std::uint64_t kPlanStream = 0x706c616eULL;
constexpr std::uint64_t kObsStream = 0x6f627376ULL;
constexpr std::uint64_t kUqStream = 0x75710000ULL;

[[noreturn]] void invalid(const std::string& field, const std::string& what) {
  fail(ErrorKind::kValidation, field + ": " + what);
}

std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

template <class T>
T get_as(const json& value, const std::string& field) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    invalid(field, "has the wrong type");
  }
}

template <class T>
T required(const json& obj, const std::string& parent, const char* key) {
  const std::string field = join_path(parent, key);
  if (!obj.contains(key)) invalid(field, "is required");
  return get_as<T>(obj.at(key), field);
}

template <class T>
T optional_field(const json& obj, const std::string& parent, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return get_as<T>(obj.at(key), join_path(parent, key));
}

std::size_t count_field(const json& obj, const std::string& parent, const char* key, std::size_t fallback,
                        std::size_t minimum) {
  const std::string field = join_path(parent, key);
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
    invalid(field, "must be a nonnegative integer");
  const auto n = v.get<std::size_t>();
  if (n < minimum) invalid(field, "must be at least " + std::to_string(minimum));
  return n;
}

double positive_field(const json& obj, const std::string& parent, const char* key) {
  const double v = required<double>(obj, parent, key);
  if (!(std::isfinite(v) && v > 0.0)) invalid(join_path(parent, key), "must be positive");
  return v;
}

void reject_unknown(const json& obj, const std::string& parent, std::initializer_list<const char*> known) {
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) invalid(join_path(parent, key), "unknown field");
}

const json& section(const PipelineConfig& c, const char* name) {
  if (!c.raw.contains(name)) invalid(name, "section is required for this stage");
  return c.raw.at(name);
}

std::vector<Vector> point_list(const json& obj, const std::string& parent, const char* key, std::size_t dim) {
  const std::string field = join_path(parent, key);
  std::vector<Vector> out;
  if (!obj.contains(key)) return out;
  const json& arr = obj.at(key);
  if (!arr.is_array()) invalid(field, "must be a list of points");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string item = field + "[" + std::to_string(i) + "]";
    Vector p = get_as<Vector>(arr[i], item);
    if (p.size() != dim)
      invalid(item, "expected " + std::to_string(dim) + " entries, got " + std::to_string(p.size()));
    for (double v : p)
      if (!std::isfinite(v)) invalid(item, "entries must be finite");
    out.push_back(std::move(p));
  }
  return out;
}

fs::path resolve(const PipelineConfig& c, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : c.base_dir / path;
}

std::string file_hash(const fs::path& p) { return hex64(fnv1a(read_file(p))); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Tables are {columns: [...], rows: [[...], ...]} both in stage reports and,
// rendered as CSV, in artifacts.
json make_table(std::vector<std::string> columns) { return {{"columns", std::move(columns)}, {"rows", json::array()}}; }

std::string cell_text(const json& v) {
  if (v.is_number_float()) return fmt(v.get<double>());
  if (v.is_number()) return v.dump();
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::string table_csv(const json& t) {
  std::string out;
  const auto& cols = t.at("columns");
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i].get<std::string>();
  out += "\n";
  for (const auto& row : t.at("rows")) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + cell_text(row[i]);
    out += "\n";
  }
  return out;
}

std::string table_text(const json& t) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head;
  for (const auto& c : t.at("columns")) head.push_back(c.get<std::string>());
  std::vector<std::size_t> width(head.size());
  for (std::size_t i = 0; i < head.size(); ++i) width[i] = head[i].size();
  for (const auto& row : t.at("rows")) {
    std::vector<std::string> r;
    for (std::size_t i = 0; i < row.size(); ++i) {
      r.push_back(row[i].is_number_float() ? [&] {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6e", row[i].get<double>());
        return std::string(buf);
      }()
                                           : cell_text(row[i]));
      if (i < width.size()) width[i] = std::max(width[i], r.back().size());
    }
    cells.push_back(std::move(r));
  }
  auto line = [&](const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::string c = r[i];
      if (i < width.size()) c.insert(0, width[i] - c.size(), ' ');
      s += "  " + c;
    }
    return s + "\n";
  };
  std::string out = line(head);
  for (const auto& r : cells) out += line(r);
  return out;
}

// Reads a headed numeric CSV written by table_csv.
Matrix read_table_csv(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::string header;
  std::getline(in, header);
  return read_csv(in);
}

// Collects a stage's files in a hidden sibling directory and swaps it into
// place only once everything has been written.
class Stage {
 public:
  Stage(const PipelineConfig& config, std::string name, std::string subdir)
      : config_(config), name_(std::move(name)), subdir_(std::move(subdir)) {
    staging_ = config_.output_dir / ("." + subdir_ + ".staging");
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  Stage(const Stage&) = delete;
  Stage& operator=(const Stage&) = delete;
  ~Stage() {
    std::error_code ec;
    if (!committed_) fs::remove_all(staging_, ec);
  }

  fs::path path(const std::string& rel) const { return staging_ / rel; }
  void text(const std::string& rel, const std::string& content) const { write_file_atomic(path(rel), content); }
  void table(const std::string& rel, const json& t) const { text(rel, table_csv(t)); }

  json commit(json report) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(staging_))
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), staging_));
    std::sort(files.begin(), files.end());
    json artifacts = json::array();
    for (const auto& f : files) {
      const std::string content = read_file(staging_ / f);
      artifacts.push_back({{"path", (fs::path(subdir_) / f).generic_string()},
                           {"fnv1a", hex64(fnv1a(content))},
                           {"bytes", content.size()}});
    }
    const fs::path target = config_.output_dir / subdir_;
    fs::remove_all(target);
    fs::rename(staging_, target);
    committed_ = true;

    report["stage"] = name_;
    report["version"] = kVersion;
    report["seed"] = config_.seed;
    report["config_hash"] = config_.hash();
    report["artifacts"] = std::move(artifacts);
    if (!report.contains("inputs")) report["inputs"] = json::array();
    write_file_atomic(config_.output_dir / (report_name(name_) + ".json"), report.dump(2) + "\n");
    spdlog::info("{}: published {} artifacts under {}", name_, files.size(), target.string());
    return report;
  }

  static std::string report_name(std::string stage) {
    std::replace(stage.begin(), stage.end(), '-', '_');
    return stage;
  }

 private:
  const PipelineConfig& config_;
  std::string name_;
  std::string subdir_;
  fs::path staging_;
  bool committed_ = false;
};

json input_record(const PipelineConfig& c, const fs::path& p) {
  std::error_code ec;
  fs::path rel = fs::relative(p, c.output_dir, ec);
  const bool inside = !ec && !rel.empty() && *rel.begin() != "..";
  return {{"path", inside ? rel.generic_string() : fs::absolute(p).generic_string()},
          {"fnv1a", file_hash(p)},
          {"in_run_dir", inside}};
}

void require_file(const fs::path& p, const std::string& field, const std::string& hint) {
  if (!fs::is_regular_file(p)) fail(ErrorKind::kIo, field + ": file not found: " + p.string() + hint);
}

// ---------------------------------------------------------------------------
// Section parsers

darcy::DarcyModel parse_darcy(const json& j) {
  try {
    return darcy::model_from_json(j);
  } catch (const Error& e) {
    fail(e.kind(), std::string("model.darcy: ") + e.what());
  }
}

std::vector<darcy::PlanEntry> parse_plan(const json& model, const darcy::DarcyModel& dm, std::uint64_t seed) {
  const std::string field = "model.plan";
  if (!model.contains("plan")) invalid(field, "is required with model.darcy");
  const json& plan = model.at("plan");
  if (!plan.is_object()) invalid(field, "must be an object");
  reject_unknown(plan, field, {"count", "mu", "mu_lower", "mu_upper", "xi"});
  const std::size_t q = dm.controls.size();
  std::vector<Vector> mus = point_list(plan, field, "mu", q);
  std::size_t count = count_field(plan, field, "count", mus.size(), 1);
  if (!mus.empty() && count != mus.size()) invalid(field + ".count", "disagrees with the length of model.plan.mu");
  if (count == 0) invalid(field + ".count", "is required");

  if (mus.empty()) {
    const bool has_box = plan.contains("mu_lower") || plan.contains("mu_upper");
    if (q > 0 && !has_box)
      invalid(field, std::to_string(q) + " source controls need model.plan.mu or mu_lower/mu_upper");
    Vector lo, hi;
    if (has_box) {
      lo = required<Vector>(plan, field, "mu_lower");
      hi = required<Vector>(plan, field, "mu_upper");
      if (lo.size() != q || hi.size() != q)
        invalid(field + ".mu_lower", "bounds need one entry per source control (" + std::to_string(q) + ")");
      for (std::size_t i = 0; i < q; ++i)
        if (!(lo[i] <= hi[i])) invalid(field + ".mu_upper", "must not be below mu_lower");
    }
    for (std::size_t k = 0; k < count; ++k) {
      NormalStream rng(mix_seed(seed, kPlanStream), k);
      Vector mu(q);
      for (std::size_t i = 0; i < q; ++i) mu[i] = lo[i] == hi[i] ? lo[i] : rng.uniform(lo[i], hi[i]);
      mus.push_back(std::move(mu));
    }
  }
  std::vector<Vector> xis = point_list(plan, field, "xi", dm.field.n_modes);
  if (!xis.empty() && xis.size() != count) invalid(field + ".xi", "needs one entry per plan sample");

  std::vector<darcy::PlanEntry> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    out[k].mu = mus[k];
    if (!xis.empty()) out[k].xi = xis[k];
  }
  return out;
}

std::optional<ProductSampler> parse_uq(const PipelineConfig& c) {
  if (!c.raw.contains("uq")) return std::nullopt;
  const json& u = c.raw.at("uq");
  if (!u.is_object()) invalid("uq", "must be an object");
  reject_unknown(u, "uq", {"eta_M", "eta_N", "count_M", "count_N"});
  ProductSampler s;
  try {
    s.spec_m = noise_from_json(u.value("eta_M", json::object()), "uq.eta_M");
    s.spec_n = noise_from_json(u.value("eta_N", json::object()), "uq.eta_N");
  } catch (const Error& e) {
    fail(ErrorKind::kValidation, e.what());
  }
  s.count_m = count_field(u, "uq", "count_M", 8, 1);
  s.count_n = count_field(u, "uq", "count_N", 8, 1);
  s.seed = mix_seed(c.seed, kUqStream);
  return s;
}

fs::path snapshot_stem(const PipelineConfig& c, bool perturbed) {
  const json& model = section(c, "model");
  if (model.contains("snapshots")) {
    if (perturbed) invalid("rom.perturbed", "only applies to snapshots produced by generate");
    return resolve(c, model.at("snapshots").get<std::string>());
  }
  return c.output_dir / "generate" / (perturbed ? "snapshots_perturbed" : "snapshots");
}

SnapshotSet load_input_snapshots(const PipelineConfig& c, json& inputs, bool perturbed = false) {
  const fs::path stem = snapshot_stem(c, perturbed);
  const bool external = section(c, "model").contains("snapshots");
  const std::string hint = external ? "" : " (run generate first)";
  for (const char* ext : {".csv", ".json"}) {
    fs::path p = stem;
    p += ext;
    require_file(p, external ? "model.snapshots" : "generate", hint);
    inputs.push_back(input_record(c, p));
  }
  return load_snapshots(stem);
}

// Mean, standard error and the 95% normal half width of each column.
json mc_summary(const Matrix& samples, const std::vector<std::string>& names) {
  json t = make_table({"quantity", "mean", "std_error", "ci95_half_width", "samples"});
  const std::size_t m = samples.rows();
  for (std::size_t j = 0; j < samples.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t k = 0; k < m; ++k) mean += samples(k, j);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t k = 0; k < m; ++k) var += (samples(k, j) - mean) * (samples(k, j) - mean);
    var = m > 1 ? var / static_cast<double>(m - 1) : 0.0;
    const double se = std::sqrt(var / static_cast<double>(m));
    t["rows"].push_back({names[j], mean, se, 1.959963984540054 * se, m});
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string PipelineConfig::hash() const { return hex64(fnv1a(raw.dump())); }

PipelineConfig config_from_json(const json& raw, const fs::path& base_dir, const Overrides& overrides) {
  if (!raw.is_object()) invalid("config", "top level must be an object");
  reject_unknown(raw, "", {"seed", "output_dir", "threads", "model", "rom", "emulator", "assimilation", "uq"});
  PipelineConfig c;
  c.base_dir = base_dir;
  c.raw = raw;
  c.seed = overrides.seed ? *overrides.seed : count_field(raw, "", "seed", 0, 0);
  c.threads = overrides.threads ? *overrides.threads : static_cast<unsigned>(count_field(raw, "", "threads", 1, 0));
  if (overrides.output_dir) {
    c.output_dir = *overrides.output_dir;
  } else if (raw.contains("output_dir")) {
    c.output_dir = resolve(c, get_as<std::string>(raw.at("output_dir"), "output_dir"));
  } else {
    invalid("output_dir", "is required (or pass --out)");
  }
  c.raw["seed"] = c.seed;
  c.raw.erase("output_dir");
  c.raw.erase("threads");

  for (const char* name : {"model", "rom", "emulator", "assimilation", "uq"})
    if (raw.contains(name) && !raw.at(name).is_object()) invalid(name, "must be an object");

  if (raw.contains("model")) {
    const json& m = raw.at("model");
    reject_unknown(m, "model", {"darcy", "plan", "snapshots"});
    if (m.contains("darcy") == m.contains("snapshots"))
      invalid("model", "exactly one snapshot source (darcy or snapshots) is required");
    if (m.contains("snapshots")) {
      const fs::path stem = resolve(c, get_as<std::string>(m.at("snapshots"), "model.snapshots"));
      for (const char* ext : {".csv", ".json"}) {
        fs::path p = stem;
        p += ext;
        require_file(p, "model.snapshots", "");
      }
      if (m.contains("plan")) invalid("model.plan", "only applies to model.darcy");
    }
  }
  if (raw.contains("rom")) {
    const json& r = raw.at("rom");
    if (r.contains("tensor") && r.at("tensor").contains("samples"))
      require_file(resolve(c, get_as<std::string>(r.at("tensor").at("samples"), "rom.tensor.samples")),
                   "rom.tensor.samples", "");
  }
  return c;
}

PipelineConfig load_config(const fs::path& file, const Overrides& overrides) {
  require_file(file, "--config", "");
  json raw;
  try {
    raw = json::parse(read_file(file));
  } catch (const json::parse_error& e) {
    invalid("config", std::string("not valid JSON: ") + e.what());
  }
  return config_from_json(raw, file.parent_path(), overrides);
}

// ---------------------------------------------------------------------------

json cmd_generate(const PipelineConfig& c) {
  const json& model = section(c, "model");
  if (!model.contains("darcy")) invalid("model.darcy", "generate needs a Darcy model; external snapshots are used as given");
  const darcy::DarcyModel dm = parse_darcy(model.at("darcy"));
  const std::vector<darcy::PlanEntry> plan = parse_plan(model, dm, c.seed);
  const std::optional<ProductSampler> sampler = parse_uq(c);
  if (dm.transient)
    for (std::size_t t : dm.transient->qoi_time_indices)
      if (t > dm.transient->n_steps)
        invalid("model.darcy.transient.qoi_time_indices", "index " + std::to_string(t) + " exceeds n_steps");

  spdlog::info("generate: {} plan entries on a {}x{} grid", plan.size(), dm.grid.nx, dm.grid.ny);
  SnapshotSet s = generate_snapshots(dm, plan, c.seed, c.threads);
  s.provenance["model"] = darcy::model_to_json(dm);

  json values = {{"count", s.count()}, {"state_dim", s.state_dim()}, {"snapshot_hash", snapshot_hash(s)}};
  json tables = json::object();

  // QoI: steady inflow, or inflow at the listed time indices of a transient
  // run started from the initial head.
  Matrix qoi;
  std::vector<std::string> qoi_names;
  if (!dm.grid.extraction_cells.empty()) {
    const darcy::FieldModes modes = darcy::field_modes(dm.grid, dm.field);
    const std::size_t q = dm.controls.size();
    std::vector<std::size_t> times;
    if (dm.transient) {
      times = dm.transient->qoi_time_indices;
      for (std::size_t t : times) qoi_names.push_back("q_t" + std::to_string(t));
    } else {
      qoi_names.push_back("q");
    }
    qoi = Matrix(s.count(), qoi_names.size());
    parallel_for(s.count(), c.threads, "qoi sample", [&](std::size_t k) {
      const Vector& p = s.params[k];
      const std::span<const double> mu(p.data(), q);
      const darcy::ConductivityField field =
          darcy::sample_conductivity(modes, std::span<const double>(p.data() + q, p.size() - q));
      const Vector g = dm.source_for(mu);
      if (!dm.transient) {
        darcy::DarcySolution sol{s.states.col(k), 0.0};
        qoi(k, 0) = darcy::qoi_inflow(dm.grid, field, sol);
        return;
      }
      const Vector w0(dm.grid.cell_count(), dm.transient->initial_head);
      const auto seq =
          darcy::solve_transient(dm.grid, field, g, dm.boundary, w0, dm.transient->dt, dm.transient->n_steps);
      for (std::size_t i = 0; i < times.size(); ++i) qoi(k, i) = darcy::qoi_inflow(dm.grid, field, seq, times[i]);
    });
    tables["qoi"] = mc_summary(qoi, qoi_names);
  }

  std::optional<SnapshotSet> perturbed;
  if (sampler) {
    perturbed = perturb_snapshots(s, *sampler);
    const std::size_t n = s.state_dim();
    const TotalExpectation te = total_expectation(
        [n](std::span<const double> em, std::span<const double> en) {
          double e = 0.0;
          for (std::size_t i = 0; i < n; ++i) e += (em[i] + en[i]) * (em[i] + en[i]);
          return e / static_cast<double>(n);
        },
        *sampler, n);
    const double analytic = (trace(sampler->spec_m.covariance(n)) + trace(sampler->spec_n.covariance(n))) /
                            static_cast<double>(n);
    values["uq"] = {{"sampler", sampler->to_json()},
                    {"noise_energy_per_entry", te.value},
                    {"noise_energy_nested", te.nested},
                    {"noise_energy_flat", te.flat},
                    {"nested_equals_flat", te.nested == te.flat},
                    {"noise_energy_analytic", analytic}};
  }

  Stage stage(c, "generate", "generate");
  save_snapshots(s, stage.path("snapshots"));
  if (perturbed) save_snapshots(*perturbed, stage.path("snapshots_perturbed"));
  if (!qoi_names.empty()) {
    json t = make_table({"sample"});
    for (const auto& n : qoi_names) t["columns"].push_back(n);
    for (std::size_t k = 0; k < qoi.rows(); ++k) {
      json row = {k};
      for (std::size_t j = 0; j < qoi.cols(); ++j) row.push_back(qoi(k, j));
      t["rows"].push_back(row);
    }
    stage.table("qoi.csv", t);
    stage.table("qoi_summary.csv", tables["qoi"]);
  }
  return stage.commit({{"values", values}, {"tables", tables}});
}

// ---------------------------------------------------------------------------

namespace {

std::size_t select_rank(const json& rom, std::size_t available, const Vector& sigmas) {
  if (rom.contains("rank") && rom.contains("threshold")) invalid("rom", "give rank or threshold, not both");
  if (rom.contains("threshold")) {
    const double t = positive_field(rom, "rom", "threshold");
    std::size_t r = 0;
    while (r < sigmas.size() && sigmas[r] >= t) ++r;
    return r;
  }
  const std::size_t r = count_field(rom, "rom", "rank", available, 0);
  if (r > available)
    invalid("rom.rank", std::to_string(r) + " exceeds the available rank " + std::to_string(available));
  return r;
}

json singular_table(const Vector& sigmas) {
  json t = make_table({"j", "sigma", "sigma_squared"});
  for (std::size_t j = 0; j < sigmas.size(); ++j) t["rows"].push_back({j + 1, sigmas[j], sigmas[j] * sigmas[j]});
  return t;
}

// Error of the rank-M truncation against the tail sum of squared singular
// values beyond M.
json error_table(const Vector& sigmas, const std::function<double(std::size_t)>& error_at, double& worst_rel) {
  json t = make_table({"rank", "weighted_error", "tail_energy", "abs_difference"});
  double total = 0.0;
  for (double s : sigmas) total += s * s;
  worst_rel = 0.0;
  for (std::size_t m = 0; m <= sigmas.size(); ++m) {
    double tail = 0.0;
    for (std::size_t j = sigmas.size(); j-- > m;) tail += sigmas[j] * sigmas[j];
    const double err = error_at(m);
    const double diff = std::abs(err - tail);
    worst_rel = std::max(worst_rel, total > 0.0 ? diff / total : diff);
    t["rows"].push_back({m, err, tail, diff});
  }
  return t;
}

json build_kle(const PipelineConfig& c, const json& rom, json& inputs, Stage*& stage_out,
               std::optional<Stage>& stage) {
  const SnapshotSet s = load_input_snapshots(c, inputs, optional_field<bool>(rom, "rom", "perturbed", false));
  const KleBasis full = kle(s);
  const std::size_t r = select_rank(rom, full.rank(), full.sigmas);
  double worst = 0.0;
  json errors = error_table(
      full.sigmas, [&](std::size_t m) { return weighted_reconstruction_error(s, full, m); }, worst);

  KleBasis kept = full;
  kept.sigmas.resize(r);
  kept.modes = full.modes.leading_cols(r);
  kept.param_functions = full.param_functions.leading_cols(r);

  double total = 0.0;
  for (double v : full.sigmas) total += v * v;
  json values = {{"method", "kle"},
                 {"rank", r},
                 {"available_rank", full.rank()},
                 {"total_energy", total},
                 {"truncation_error", weighted_reconstruction_error(s, full, r)},
                 {"tail_identity_max_relative_deviation", worst}};
  json tables = {{"singular_values", singular_table(full.sigmas)}, {"error_vs_rank", errors}};

  stage.emplace(c, "build-rom", "rom");
  stage_out = &*stage;
  save_kle(kept, stage->path("kle"));
  stage->table("singular_values.csv", tables["singular_values"]);
  stage->table("error_vs_rank.csv", errors);
  return {{"values", values}, {"tables", tables}};
}

json build_pod(const PipelineConfig& c, const json& rom, json& inputs, Stage*& stage_out,
               std::optional<Stage>& stage) {
  const SnapshotSet s = load_input_snapshots(c, inputs, optional_field<bool>(rom, "rom", "perturbed", false));
  const std::size_t available = pod_basis(s, 0).singular_values.size();
  const PodBasis full = pod_basis(s, available);
  const std::size_t r = select_rank(rom, available, full.singular_values);
  double worst = 0.0;
  json errors = error_table(
      full.singular_values, [&](std::size_t m) { return pod_objective(s, full.columns.leading_cols(m)); }, worst);
  const PodBasis kept = pod_basis(s, r);
  json values = {{"method", "pod"},
                 {"rank", r},
                 {"available_rank", available},
                 {"captured_energy", kept.captured_energy},
                 {"objective", pod_objective(s, kept.columns)},
                 {"tail_identity_max_relative_deviation", worst}};
  json tables = {{"singular_values", singular_table(full.singular_values)}, {"error_vs_rank", errors}};

  stage.emplace(c, "build-rom", "rom");
  stage_out = &*stage;
  save_matrix_csv(stage->path("pod_basis.csv"), kept.columns);
  stage->table("singular_values.csv", tables["singular_values"]);
  stage->table("error_vs_rank.csv", errors);
  return {{"values", values}, {"tables", tables}};
}

json build_rbm(const PipelineConfig& c, const json& rom, Stage*& stage_out, std::optional<Stage>& stage) {
  const json& model = section(c, "model");
  if (!model.contains("darcy")) invalid("rom.method", "rbm needs model.darcy for the affine operator");
  const darcy::DarcyModel dm = parse_darcy(model.at("darcy"));
  if (!rom.contains("rbm")) invalid("rom.rbm", "is required for method rbm");
  const json& rb = rom.at("rbm");
  reject_unknown(rb, "rom.rbm", {"split", "lower", "upper", "train", "test", "drop_tol"});
  ParamBox box{required<Vector>(rb, "rom.rbm", "lower"), required<Vector>(rb, "rom.rbm", "upper")};
  if (box.lower.size() != 2 || box.upper.size() != 2) invalid("rom.rbm.lower", "the two-subdomain box has 2 entries");
  for (std::size_t i = 0; i < 2; ++i)
    if (!(box.lower[i] > 0.0 && box.lower[i] <= box.upper[i]))
      invalid("rom.rbm.upper", "need 0 < lower <= upper in every coordinate");
  const std::size_t split = count_field(rb, "rom.rbm", "split", dm.grid.nx / 2, 1);
  if (split >= dm.grid.nx) invalid("rom.rbm.split", "must be below the grid width");
  const std::vector<Vector> train = point_list(rb, "rom.rbm", "train", 2);
  if (train.empty()) invalid("rom.rbm.train", "needs at least one parameter point");
  std::vector<Vector> test = point_list(rb, "rom.rbm", "test", 2);
  if (test.empty()) test.push_back(box.center());
  for (const auto& [label, list] : {std::pair{"train", &train}, std::pair{"test", static_cast<const std::vector<Vector>*>(&test)}})
    for (std::size_t i = 0; i < list->size(); ++i)
      if (!box.contains((*list)[i]))
        invalid(std::string("rom.rbm.") + label + "[" + std::to_string(i) + "]", "lies outside the parameter box");
  RbmOptions opts;
  opts.threads = c.threads;
  opts.drop_tol = optional_field<double>(rb, "rom.rbm", "drop_tol", opts.drop_tol);

  const AffineProblem prob = darcy_two_subdomain(dm.grid, split, dm.source, box);
  prob.op.check_coercivity(c.seed);

  json nested = make_table({"train_size", "basis_dim", "max_energy_error"});
  RbmModel model_full;
  for (std::size_t i = 1; i <= train.size(); ++i) {
    const std::vector<Vector> prefix(train.begin(), train.begin() + static_cast<long>(i));
    RbmModel m = rbm_offline(prob.op, prob.load, prefix, opts);
    double worst = 0.0;
    for (const auto& mu : test) worst = std::max(worst, energy_error(prob.op, prob.load, m, mu));
    nested["rows"].push_back({i, m.dim(), worst});
    if (i == train.size()) model_full = std::move(m);
  }
  double train_dev = 0.0;
  for (const auto& mu : train) {
    const Vector u = affine_solve(prob.op, prob.load, mu);
    const Vector v = rbm_online(model_full, mu).lifted;
    double d = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) d = std::max(d, std::abs(u[i] - v[i]));
    train_dev = std::max(train_dev, d / std::max(max_abs(u), 1e-300));
  }
  json values = {{"method", "rbm"},
                 {"basis_dim", model_full.dim()},
                 {"split", split},
                 {"train_points", train.size()},
                 {"test_points", test.size()},
                 {"training_max_relative_deviation", train_dev}};
  json tables = {{"energy_error_vs_train_size", nested}};

  stage.emplace(c, "build-rom", "rom");
  stage_out = &*stage;
  save_rbm(model_full, stage->path("rbm"));
  stage->table("energy_error_vs_train_size.csv", nested);
  return {{"values", values}, {"tables", tables}};
}

json build_tensor(const PipelineConfig& c, const json& rom, json& inputs, Stage*& stage_out,
                  std::optional<Stage>& stage) {
  if (!rom.contains("tensor")) invalid("rom.tensor", "is required for method tensor");
  const json& tj = rom.at("tensor");
  reject_unknown(tj, "rom.tensor", {"samples", "sweeps", "tol"});
  const fs::path file = resolve(c, required<std::string>(tj, "rom.tensor", "samples"));
  require_file(file, "rom.tensor.samples", "");
  AlsOptions opts;
  opts.rank = count_field(rom, "rom", "rank", 0, 1);
  if (opts.rank == 0) invalid("rom.rank", "is required for method tensor");
  opts.sweeps = count_field(tj, "rom.tensor", "sweeps", opts.sweeps, 1);
  opts.tol = optional_field<double>(tj, "rom.tensor", "tol", opts.tol);
  opts.seed = c.seed;
  inputs.push_back(input_record(c, file));
  std::istringstream in(read_file(file));
  const Tensor3 t = read_tensor_csv(in);
  const TensorCP cp = tensor_als(t, opts);
  const Tensor3 approx = cp.full();
  double diff = 0.0;
  for (std::size_t i = 0; i < t.entries().size(); ++i) {
    const double d = t.entries()[i] - approx.entries()[i];
    diff += d * d;
  }
  const double norm = t.norm();
  json trace = make_table({"update", "objective"});
  for (std::size_t i = 0; i < cp.objective_trace.size(); ++i) trace["rows"].push_back({i, cp.objective_trace[i]});
  json values = {{"method", "tensor"},
                 {"rank", cp.rank()},
                 {"requested_rank", opts.rank},
                 {"dims", {t.dim(0), t.dim(1), t.dim(2)}},
                 {"relative_error", norm > 0.0 ? std::sqrt(diff) / norm : std::sqrt(diff)}};
  json tables = {{"objective_trace", trace}};

  stage.emplace(c, "build-rom", "rom");
  stage_out = &*stage;
  save_tensor_cp(cp, stage->path("tensor"));
  stage->table("objective_trace.csv", trace);
  return {{"values", values}, {"tables", tables}};
}

}  // namespace

json cmd_build_rom(const PipelineConfig& c) {
  const json& rom = section(c, "rom");
  reject_unknown(rom, "rom", {"method", "rank", "threshold", "perturbed", "rbm", "tensor"});
  const std::string method = required<std::string>(rom, "rom", "method");
  json inputs = json::array();
  std::optional<Stage> stage;
  Stage* s = nullptr;
  json report;
  if (method == "kle") {
    report = build_kle(c, rom, inputs, s, stage);
  } else if (method == "pod") {
    report = build_pod(c, rom, inputs, s, stage);
  } else if (method == "rbm") {
    report = build_rbm(c, rom, s, stage);
  } else if (method == "tensor") {
    report = build_tensor(c, rom, inputs, s, stage);
  } else {
    invalid("rom.method", "must be kle, pod, rbm or tensor (got '" + method + "')");
  }
  report["inputs"] = inputs;
  return s->commit(std::move(report));
}

// ---------------------------------------------------------------------------

json cmd_emulate(const PipelineConfig& c) {
  const json& e = section(c, "emulator");
  reject_unknown(e, "emulator", {"kernel", "length_scale", "amplitude", "mean", "target", "train", "query"});
  KernelSpec kernel;
  const std::string kind = optional_field<std::string>(e, "emulator", "kernel", "squared_exponential");
  if (kind == "squared_exponential") kernel.kind = KernelKind::kSquaredExponential;
  else if (kind == "exponential") kernel.kind = KernelKind::kExponential;
  else invalid("emulator.kernel", "must be squared_exponential or exponential");
  if (e.contains("length_scale")) kernel.length_scale = positive_field(e, "emulator", "length_scale");
  kernel.amplitude = e.contains("amplitude") ? positive_field(e, "emulator", "amplitude") : 1.0;
  const std::string mean = optional_field<std::string>(e, "emulator", "mean", "zero");
  if (mean != "zero" && mean != "constant_fit") invalid("emulator.mean", "must be zero or constant_fit");
  const std::string target = optional_field<std::string>(e, "emulator", "target", "states");

  json inputs = json::array();
  const SnapshotSet s = load_input_snapshots(c, inputs);
  const std::size_t m = s.count();
  if (m == 0) invalid("model", "the snapshot set is empty");
  const std::size_t dim = s.params.front().size();

  Matrix values;
  std::vector<std::string> names;
  if (target == "states") {
    values = s.states.transpose();
    for (std::size_t i = 0; i < s.state_dim(); ++i) names.push_back("r" + std::to_string(i));
  } else if (target == "kle") {
    const fs::path dir = c.output_dir / "rom" / "kle";
    require_file(dir / "kle.json", "emulator.target", " (run build-rom with method kle first)");
    for (const char* f : {"kle.json", "sigmas.csv", "modes.csv", "param_functions.csv"})
      inputs.push_back(input_record(c, dir / f));
    const KleBasis b = load_kle(dir);
    if (b.param_functions.rows() != m) invalid("emulator.target", "KLE artifacts do not match the snapshot set");
    values = Matrix(m, b.rank());
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 0; j < b.rank(); ++j) values(k, j) = b.sigmas[j] * b.param_functions(k, j);
    for (std::size_t j = 0; j < b.rank(); ++j) names.push_back("c" + std::to_string(j + 1));
  } else if (target == "qoi") {
    const fs::path file = c.output_dir / "generate" / "qoi.csv";
    require_file(file, "emulator.target", " (generate writes QoI when extraction cells are set)");
    inputs.push_back(input_record(c, file));
    const Matrix table = read_table_csv(file);
    if (table.rows() != m) invalid("emulator.target", "QoI table does not match the snapshot set");
    values = Matrix(m, table.cols() - 1);
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 1; j < table.cols(); ++j) values(k, j - 1) = table(k, j);
    for (std::size_t j = 1; j < table.cols(); ++j) names.push_back("q" + std::to_string(j - 1));
  } else {
    invalid("emulator.target", "must be states, kle or qoi");
  }
  if (values.cols() == 0) invalid("emulator.target", "has no output components");

  std::vector<std::size_t> train_idx;
  if (e.contains("train")) {
    train_idx = get_as<std::vector<std::size_t>>(e.at("train"), "emulator.train");
    for (std::size_t i = 0; i < train_idx.size(); ++i)
      if (train_idx[i] >= m)
        invalid("emulator.train[" + std::to_string(i) + "]", "index " + std::to_string(train_idx[i]) + " out of range");
    if (train_idx.empty()) invalid("emulator.train", "needs at least one index");
  } else {
    for (std::size_t k = 0; k < m; ++k) train_idx.push_back(k);
  }
  const std::vector<Vector> queries = point_list(e, "emulator", "query", dim);

  std::vector<Vector> x;
  Matrix y(train_idx.size(), values.cols());
  for (std::size_t i = 0; i < train_idx.size(); ++i) {
    x.push_back(s.params[train_idx[i]]);
    for (std::size_t j = 0; j < values.cols(); ++j) y(i, j) = values(train_idx[i], j);
  }
  const GpeEmulator em = gpe_train(x, y, kernel, mean == "zero" ? MeanMode::kZero : MeanMode::kConstantFit);
  for (const auto& w : em.warnings) spdlog::warn("emulate: {}", w);

  auto header = [&] {
    std::vector<std::string> cols{"index"};
    for (std::size_t i = 0; i < dim; ++i) cols.push_back("x" + std::to_string(i));
    for (const auto& n : names) cols.push_back(n);
    return cols;
  };
  json predictions = make_table(header());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    json row = {q};
    for (double v : queries[q]) row.push_back(v);
    for (double v : gpe_predict(em, queries[q])) row.push_back(v);
    predictions["rows"].push_back(row);
  }

  json training = make_table({"index", "abs_error", "relative_error"});
  double train_worst = 0.0;
  for (std::size_t i = 0; i < em.train_inputs.size(); ++i) {
    const Vector p = gpe_predict(em, em.train_inputs[i]);
    double d = 0.0, scale = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      d = std::max(d, std::abs(p[j] - em.train_values(i, j)));
      scale = std::max(scale, std::abs(em.train_values(i, j)));
    }
    const double rel = scale > 0.0 ? d / scale : d;
    train_worst = std::max(train_worst, rel);
    training["rows"].push_back({i, d, rel});
  }

  json loo_table = make_table({"index", "loo_error"});
  json loo_values = nullptr;
  if (em.train_inputs.size() >= 2) {
    const LooResult loo = gpe_loo(em);
    for (std::size_t i = 0; i < loo.errors.size(); ++i) loo_table["rows"].push_back({i, loo.errors[i]});
    loo_values = loo.rms;
  }

  json values_out = {{"target", target},
                     {"kernel", kind},
                     {"length_scale", *em.kernel.length_scale},
                     {"amplitude", em.kernel.amplitude},
                     {"mean", mean},
                     {"train_points", em.train_inputs.size()},
                     {"queries", queries.size()},
                     {"training_max_relative_error", train_worst},
                     {"loo_rms", loo_values},
                     {"warnings", em.warnings}};
  json tables = {{"training_errors", training}, {"loo_errors", loo_table}};

  Stage stage(c, "emulate", "emulate");
  save_gpe(em, stage.path("emulator.json"));
  stage.table("predictions.csv", predictions);
  stage.table("training_errors.csv", training);
  stage.table("loo_errors.csv", loo_table);
  return stage.commit({{"inputs", inputs}, {"values", values_out}, {"tables", tables}});
}

// ---------------------------------------------------------------------------

namespace {

double normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

struct Moments {
  Vector mean, var;
};

Moments ensemble_moments(const Matrix& x) {
  Moments out{Vector(x.rows(), 0.0), Vector(x.rows(), 0.0)};
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.cols(); ++k) s += x(i, k);
    out.mean[i] = s / n;
    double v = 0.0;
    for (std::size_t k = 0; k < x.cols(); ++k) v += (x(i, k) - out.mean[i]) * (x(i, k) - out.mean[i]);
    out.var[i] = x.cols() > 1 ? v / (n - 1.0) : 0.0;
  }
  return out;
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

json cmd_assimilate(const PipelineConfig& c) {
  const json& a = section(c, "assimilation");
  const std::string P = "assimilation";
  reject_unknown(a, P,
                 {"model", "prior_mean", "prior_cov", "observed_indices", "epsilon", "observation", "ensemble_size",
                  "degrees", "event_threshold", "quadrature_points", "feature_cap"});
  const std::string kind = optional_field<std::string>(a, P, "model", "linear_gaussian");
  if (kind != "linear_gaussian" && kind != "darcy") invalid(P + ".model", "must be linear_gaussian or darcy");
  const double eps = positive_field(a, P, "epsilon");
  const auto obs_idx = required<std::vector<std::size_t>>(a, P, "observed_indices");
  if (obs_idx.empty()) invalid(P + ".observed_indices", "needs at least one index");
  const Vector y = required<Vector>(a, P, "observation");
  if (y.size() != obs_idx.size()) invalid(P + ".observation", "needs one value per observed index");
  std::vector<std::size_t> degrees = optional_field<std::vector<std::size_t>>(a, P, "degrees", {1, 2, 3});
  for (std::size_t i = 0; i < degrees.size(); ++i)
    if (degrees[i] < 1) invalid(P + ".degrees[" + std::to_string(i) + "]", "must be at least 1");
  std::sort(degrees.begin(), degrees.end());
  degrees.erase(std::unique(degrees.begin(), degrees.end()), degrees.end());
  const std::size_t cap = count_field(a, P, "feature_cap", 2000, 1);
  std::optional<double> threshold;
  if (a.contains("event_threshold")) threshold = required<double>(a, P, "event_threshold");
  const std::size_t quad_points = count_field(a, P, "quadrature_points", 4001, 3);

  json inputs = json::array();
  EnsembleState ens;
  std::optional<LinearGaussianModel> lg;
  std::optional<SnapshotSet> snaps;
  std::size_t dx = 0;
  if (kind == "linear_gaussian") {
    LinearGaussianModel mdl;
    mdl.prior_mean = required<Vector>(a, P, "prior_mean");
    dx = mdl.prior_mean.size();
    if (dx == 0) invalid(P + ".prior_mean", "must not be empty");
    const auto rows = required<std::vector<Vector>>(a, P, "prior_cov");
    if (rows.size() != dx) invalid(P + ".prior_cov", "must be " + std::to_string(dx) + " x " + std::to_string(dx));
    for (const auto& r : rows)
      if (r.size() != dx) invalid(P + ".prior_cov", "must be " + std::to_string(dx) + " x " + std::to_string(dx));
    mdl.prior_cov = Matrix::from_columns(rows).transpose();
    mdl.observation = Matrix(obs_idx.size(), dx);
    for (std::size_t i = 0; i < obs_idx.size(); ++i) {
      if (obs_idx[i] >= dx) invalid(P + ".observed_indices[" + std::to_string(i) + "]", "out of range");
      mdl.observation(i, obs_idx[i]) = 1.0;
    }
    mdl.noise_cov = (eps * eps) * Matrix::identity(obs_idx.size());
    try {
      mdl.validate();
    } catch (const Error& e) {
      fail(e.kind() == ErrorKind::kDomain ? ErrorKind::kValidation : e.kind(), P + ": " + e.what());
    }
    const std::size_t n = count_field(a, P, "ensemble_size", 0, 2);
    if (n == 0) invalid(P + ".ensemble_size", "is required");
    ens = sample_linear_gaussian(mdl, n, c.seed);
    lg = mdl;
  } else {
    snaps = load_input_snapshots(c, inputs);
    dx = snaps->state_dim();
    if (snaps->count() < 2) invalid("model", "assimilation needs at least two snapshots");
    for (std::size_t i = 0; i < obs_idx.size(); ++i)
      if (obs_idx[i] >= dx) invalid(P + ".observed_indices[" + std::to_string(i) + "]", "out of range");
    ens.x = snaps->states;
    ens.z = Matrix(obs_idx.size(), snaps->count());
    for (std::size_t k = 0; k < snaps->count(); ++k) {
      NormalStream rng(mix_seed(c.seed, kObsStream), k);
      for (std::size_t i = 0; i < obs_idx.size(); ++i) ens.z(i, k) = ens.x(obs_idx[i], k) + eps * rng();
    }
    ens.provenance = {{"source", "snapshots"}, {"seed", c.seed}, {"epsilon", eps}};
  }
  const std::optional<ProductSampler> sampler = parse_uq(c);

  spdlog::info("assimilate: {} members, state dim {}, {} observations", ens.size(), dx, obs_idx.size());
  const GmkfResult upd = gmkf_update(ens, y);
  const Moments prior = ensemble_moments(ens.x);
  const Moments post = ensemble_moments(upd.x);

  json cmp = make_table({"component", "prior_mean", "prior_var", "gmkf_mean", "gmkf_var", "exact_mean", "exact_var",
                         "quadrature_mean", "quadrature_var", "mean_rel_diff", "var_rel_diff"});
  json values = {{"model", kind},
                 {"ensemble_size", ens.size()},
                 {"epsilon", eps},
                 {"gain_jitter", upd.map.jitter_used}};
  std::optional<QuadratureBayes> quad;
  if (lg) {
    // Conjugate update m + K (y - H m), P - K H P with K = P H^T S^{-1}.
    const Matrix& H = lg->observation;
    const Matrix ph = lg->prior_cov * H.transpose();
    const Matrix sm = H * ph + lg->noise_cov;
    const CholFactor f = chol_psd(sm);
    Vector innov = y;
    const Vector hm = H * lg->prior_mean;
    for (std::size_t i = 0; i < innov.size(); ++i) innov[i] -= hm[i];
    Vector m_exact = lg->prior_mean;
    axpy(1.0, ph * chol_solve(f, innov), m_exact);
    Matrix p_exact = lg->prior_cov;
    for (std::size_t i = 0; i < dx; ++i) {
      const std::span<const double> row = ph.row(i);
      const Vector sol = chol_solve(f, row);
      p_exact(i, i) -= dot(row, sol);
    }
    if (dx == 1) {
      const double m0 = lg->prior_mean[0], v0 = lg->prior_cov(0, 0);
      const double half = 12.0 * std::sqrt(v0);
      Vector grid(quad_points);
      for (std::size_t i = 0; i < quad_points; ++i)
        grid[i] = m0 - half + 2.0 * half * static_cast<double>(i) / static_cast<double>(quad_points - 1);
      quad = bayes_quadrature_1d([&](double x) { return normal_pdf(x, m0, v0); },
                                 [&](double x) {
                                   double l = 1.0;
                                   for (double yi : y) l *= normal_pdf(yi, x, eps * eps);
                                   return l;
                                 },
                                 grid);
    }
    double worst_mean = 0.0, worst_var = 0.0;
    for (std::size_t i = 0; i < dx; ++i) {
      const double dm = rel_diff(post.mean[i], m_exact[i]);
      const double dv = rel_diff(post.var[i], p_exact(i, i));
      worst_mean = std::max(worst_mean, dm);
      worst_var = std::max(worst_var, dv);
      cmp["rows"].push_back({i, prior.mean[i], prior.var[i], post.mean[i], post.var[i], m_exact[i], p_exact(i, i),
                             quad && i == 0 ? json(quad->mean) : json(nullptr),
                             quad && i == 0 ? json(quad->variance) : json(nullptr), dm, dv});
    }
    values["max_mean_rel_diff"] = worst_mean;
    values["max_var_rel_diff"] = worst_var;
    if (quad) {
      values["quadrature_evidence"] = quad->evidence;
      values["quadrature_mean_rel_diff"] = rel_diff(post.mean[0], quad->mean);
      values["quadrature_var_rel_diff"] = rel_diff(post.var[0], quad->variance);
    }
  } else {
    for (std::size_t i = 0; i < dx; ++i)
      cmp["rows"].push_back({i, prior.mean[i], prior.var[i], post.mean[i], post.var[i], nullptr, nullptr, nullptr,
                             nullptr, nullptr, nullptr});
  }

  json loss = make_table({"degree", "features", "sampled_loss"});
  bool monotone = true;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t d : degrees) {
    const PolynomialCexMap map = cex_polynomial(ens, d, cap);
    const double l = sampled_loss(ens, map);
    if (l > previous * (1.0 + 1e-10) + 1e-300) monotone = false;
    previous = l;
    loss["rows"].push_back({d, map.features.size(), l});
  }
  values["loss_non_increasing"] = monotone;

  if (threshold) {
    const std::size_t deg = degrees.empty() ? 1 : degrees.back();
    const double t = *threshold;
    const ConditionalProbability cp =
        conditional_probability(ens, [t](std::span<const double> x) { return x[0] > t; }, y, deg);
    values["event"] = {{"threshold", t},
                       {"component", 0},
                       {"degree", deg},
                       {"cex_probability", cp.value},
                       {"cex_raw", cp.raw},
                       {"clamped", cp.clamped},
                       {"quadrature_probability",
                        quad ? json(posterior_probability(*quad, [t](double x) { return x > t; })) : json(nullptr)}};
  }

  if (sampler && snaps) {
    // Loss of the affine map with and without the injected noise channels.
    const AffineCexMap& k = upd.map;
    const VectorMap chi = [&k](std::span<const double> z) { return k(z); };
    const double noisy = generalized_loss(*snaps, chi, ens.z, *sampler);
    double clean = 0.0;
    for (std::size_t j = 0; j < snaps->count(); ++j) {
      const Vector r = chi(ens.z.col(j));
      double e = 0.0;
      for (std::size_t i = 0; i < dx; ++i) e += (snaps->states(i, j) - r[i]) * (snaps->states(i, j) - r[i]);
      clean += snaps->weights[j] * e;
    }
    const double noise = trace(sampler->spec_m.covariance(dx)) + trace(sampler->spec_n.covariance(dx));
    values["uq"] = {{"sampler", sampler->to_json()},
                    {"loss_without_noise", clean},
                    {"loss_with_noise", noisy},
                    {"analytic_noise_energy", noise}};
  }
  json tables = {{"filter_comparison", cmp}, {"loss_vs_degree", loss}};

  Stage stage(c, "assimilate", "assimilate");
  save_ensemble(ens, stage.path("prior"));
  save_matrix_csv(stage.path("posterior.x.csv"), upd.x);
  stage.table("filter_comparison.csv", cmp);
  stage.table("loss_vs_degree.csv", loss);
  return stage.commit({{"inputs", inputs}, {"values", values}, {"tables", tables}});
}

// ---------------------------------------------------------------------------

RunReport cmd_report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) fail(ErrorKind::kIo, "run directory not found: " + run_dir.string());
  const std::vector<std::string> stages{"generate", "build_rom", "emulate", "assimilate"};
  std::vector<std::string> present, missing, problems;
  json stage_reports = json::object();
  for (const auto& s : stages) {
    const fs::path p = run_dir / (s + ".json");
    if (!fs::is_regular_file(p)) {
      missing.push_back(s + ".json");
      continue;
    }
    try {
      stage_reports[s] = json::parse(read_file(p));
    } catch (const json::parse_error& e) {
      problems.push_back(s + ".json: unreadable (" + e.what() + ")");
      continue;
    }
    present.push_back(s);
  }
  if (present.empty() && problems.empty()) {
    std::string msg = "missing artifacts in " + run_dir.string() + ":";
    for (const auto& m : missing) msg += " " + m;
    fail(ErrorKind::kIo, msg);
  }

  auto check = [&](const std::string& owner, const json& rec, bool relative) {
    const fs::path p = relative ? run_dir / rec.at("path").get<std::string>() : fs::path(rec.at("path").get<std::string>());
    if (!fs::is_regular_file(p)) {
      problems.push_back(owner + ": missing " + rec.at("path").get<std::string>());
    } else if (file_hash(p) != rec.at("fnv1a").get<std::string>()) {
      problems.push_back(owner + ": hash mismatch for " + rec.at("path").get<std::string>());
    }
  };
  for (const auto& s : present) {
    const json& r = stage_reports[s];
    for (const auto& a : r.value("artifacts", json::array())) check(s, a, true);
    for (const auto& i : r.value("inputs", json::array())) check(s + " input", i, i.value("in_run_dir", true));
  }
  if (!problems.empty()) {
    std::string msg = "run directory " + run_dir.string() + " does not resolve:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::kIo, msg);
  }

  RunReport out;
  json& j = out.json;
  j["version"] = kVersion;
  j["stages_run"] = present;
  json not_run = json::array();
  for (const auto& m : missing) not_run.push_back(m.substr(0, m.size() - 5));
  j["stages_not_run"] = not_run;
  for (const auto& s : present) {
    const json& r = stage_reports[s];
    j["provenance"][s] = {{"seed", r.at("seed")}, {"config_hash", r.at("config_hash")}, {"version", r.at("version")}};
    j["stages"][s] = {{"values", r.value("values", json::object())},
                      {"tables", r.value("tables", json::object())},
                      {"artifacts", r.at("artifacts")},
                      {"inputs", r.value("inputs", json::array())}};
  }

  std::ostringstream txt;
  txt << "romcex run report (version " << kVersion << ")\n";
  txt << "run directory: " << run_dir.filename().string() << "\n";
  for (const auto& s : present) {
    const json& st = j["stages"][s];
    txt << "\n== " << s << " ==\n";
    txt << "seed " << j["provenance"][s]["seed"].dump() << ", config " << j["provenance"][s]["config_hash"].get<std::string>()
        << "\n";
    for (const auto& [k, v] : st["values"].items())
      txt << "  " << k << " = " << (v.is_number_float() ? fmt(v.get<double>()) : v.dump()) << "\n";
    for (const auto& [name, t] : st["tables"].items()) txt << "\n  " << name << ":\n" << table_text(t);
    txt << "\n  artifacts:\n";
    for (const auto& a : st["artifacts"])
      txt << "    " << a["fnv1a"].get<std::string>() << "  " << a["path"].get<std::string>() << "\n";
  }
  for (const auto& m : not_run) txt << "\n(stage " << m.get<std::string>() << " not run)\n";

  const std::string body = j.dump(2) + "\n";
  out.hash = hex64(fnv1a(body));
  txt << "\nreport hash: " << out.hash << "\n";
  out.text = txt.str();
  write_file_atomic(run_dir / "report.json", body);
  write_file_atomic(run_dir / "report.txt", out.text);
  return out;
}

// ---------------------------------------------------------------------------

void configure_logging() {
  auto logger = spdlog::get("romcex");
  if (!logger) logger = spdlog::stderr_color_mt("romcex");
  spdlog::set_default_logger(logger);
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("ROMCEX_LOG")) {
    const std::string name(env);
    const auto parsed = spdlog::level::from_str(name);
    if (parsed != spdlog::level::off || name == "off") level = parsed;
  }
  spdlog::set_level(level);
}

namespace {

int exit_code(const Error& e) {
  if (e.kind() == ErrorKind::kIo) return 4;
  return e.is_numerical() ? 3 : 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  configure_logging();
  CLI::App app{"romcex: snapshot maps, reduced-order models, emulators and conditional-expectation filters"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, out_dir, run_dir;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::vector<CLI::App*> stages;
  for (const char* name : {"generate", "build-rom", "emulate", "assimilate"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "pipeline JSON config")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out_dir, "overrides the config output directory");
    sub->add_option("--threads", threads, "worker threads (0 = auto)");
    stages.push_back(sub);
  }
  CLI::App* report = app.add_subcommand("report", "consolidate stage reports of a run directory");
  report->add_option("run_dir", run_dir, "run directory");
  report->add_option("--out", out_dir, "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (report->parsed()) {
      if (run_dir.empty()) run_dir = out_dir;
      if (run_dir.empty()) invalid("report", "pass a run directory");
      const RunReport r = cmd_report(run_dir);
      std::cout << "report " << r.hash << " written to " << (fs::path(run_dir) / "report.json").string() << "\n";
      return 0;
    }
    for (CLI::App* sub : stages) {
      if (!sub->parsed()) continue;
      Overrides o;
      if (sub->count("--seed")) o.seed = seed;
      if (sub->count("--out")) o.output_dir = out_dir;
      if (sub->count("--threads")) o.threads = threads;
      const PipelineConfig cfg = load_config(config_path, o);
      const std::string name = sub->get_name();
      json r;
      if (name == "generate") r = cmd_generate(cfg);
      else if (name == "build-rom") r = cmd_build_rom(cfg);
      else if (name == "emulate") r = cmd_emulate(cfg);
      else r = cmd_assimilate(cfg);
      std::cout << name << ": " << r["artifacts"].size() << " artifacts in " << cfg.output_dir.string() << "\n";
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error (io): " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace romcex::cli
