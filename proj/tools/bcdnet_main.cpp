// Command-line front end for the dual-energy material decomposition library:
// synthetic phantoms, model training, decomposition, the edge-preserving
// baseline, RMSE evaluation, and the numerical verification suite.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dect/baseline_ep.hpp"
#include "dect/bcdnet.hpp"
#include "dect/eval.hpp"
#include "dect/parallel.hpp"
#include "dect/phantom.hpp"
#include "dect/physics.hpp"
#include "dect/rng.hpp"
#include "dect/verify.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dect;

namespace {

constexpr int kExitFailure = 1;  // a requested validation or threshold failed
constexpr int kExitUsage = 2;    // bad arguments, config, or missing files

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open file: " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out << text;
  if (!out.good()) throw std::runtime_error("write failure: " + path);
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw UsageError("invalid JSON in " + path + ": " + e.what());
  }
}

DecompPhysics physics_from_json(const json& j, const std::string& context) {
  DecompPhysics ph;
  bool have_a0 = false, have_w0 = false;
  if (j.contains("a0")) {
    const auto& a = j.at("a0");
    if (!a.is_array() || a.size() != 2 || !a[0].is_array() || a[0].size() != 2 ||
        a[1].size() != 2)
      throw UsageError(context + ": physics a0 must be a 2x2 array");
    ph.mass_atten = {a[0][0].get<double>(), a[0][1].get<double>(), a[1][0].get<double>(),
                     a[1][1].get<double>()};
    have_a0 = true;
  }
  if (j.contains("calibration")) {
    const auto& c = j.at("calibration");
    CalibrationInputs in;
    try {
      in.mu_high = {c.at("mu_high")[0].get<double>(), c.at("mu_high")[1].get<double>()};
      in.mu_low = {c.at("mu_low")[0].get<double>(), c.at("mu_low")[1].get<double>()};
      in.rho = {c.at("rho")[0].get<double>(), c.at("rho")[1].get<double>()};
    } catch (const json::exception& e) {
      throw UsageError(context + ": calibration block: " + e.what());
    }
    ph.mass_atten = calibrate(in);
    have_a0 = true;
  }
  if (j.contains("w0_diag")) {
    const auto& w = j.at("w0_diag");
    if (!w.is_array() || w.size() != 2)
      throw UsageError(context + ": w0_diag must hold two entries");
    ph.noise_weight = {w[0].get<double>(), w[1].get<double>()};
    have_w0 = true;
  }
  if (j.contains("noise_roi")) {
    const auto& n = j.at("noise_roi");
    auto estimate = [&](const char* key) {
      const auto& side = n.at(key);
      const ImageGrid img = read_image(side.at("image").get<std::string>());
      const RegionOfInterest roi = read_mask(side.at("mask").get<std::string>());
      const double var = estimate_noise_variance(img, roi);
      if (!(var > 0)) throw UsageError(context + ": noise ROI variance is zero");
      return 1.0 / var;
    };
    try {
      ph.noise_weight = {estimate("high"), estimate("low")};
    } catch (const json::exception& e) {
      throw UsageError(context + ": noise_roi block: " + e.what());
    }
    have_w0 = true;
  }
  if (!have_a0) throw UsageError(context + ": physics needs either a0 or calibration");
  if (!have_w0) throw UsageError(context + ": physics needs either w0_diag or noise_roi");
  ph.validate();
  return ph;
}

DecompPhysics load_physics(const std::string& path) {
  json j = parse_json_file(path);
  // accept either a bare physics block or a document with a "physics" key
  if (j.contains("physics")) j = j.at("physics");
  return physics_from_json(j, path);
}

json physics_to_json(const DecompPhysics& ph) {
  json j;
  j["a0"] = {{ph.mass_atten.m00, ph.mass_atten.m01}, {ph.mass_atten.m10, ph.mass_atten.m11}};
  j["w0_diag"] = {ph.noise_weight[0], ph.noise_weight[1]};
  return j;
}

MaterialImage load_material(const std::string& path, Material m) {
  return MaterialImage{read_image(path), m};
}

AttenuationPair load_pair(const std::string& high_path, const std::string& low_path) {
  AttenuationPair y{read_image(high_path), read_image(low_path)};
  y.validate();
  return y;
}

// Default desk-scale physics: synthetic mass-attenuation matrix and the
// weights matching the default 0.008 cm^-1 measurement noise.
DecompPhysics default_physics() {
  DecompPhysics ph;
  ph.mass_atten = {0.20, 0.25, 0.25, 0.60};
  ph.noise_weight = {15625.0, 15625.0};
  return ph;
}

constexpr double kDefaultSigma = 0.008;

// ---------------------------------------------------------------------------

int cmd_phantom(const std::string& spec_arg, const std::string& out_dir, std::uint64_t seed,
                int size, double sigma_high, double sigma_low, std::uint64_t noise_seed,
                const std::string& physics_path) {
  PhantomSpec spec;
  if (spec_arg == "default") {
    spec = PhantomSpec::desk_default(size);
    spec.seed = seed;
  } else if (spec_arg == "sample") {
    spec = PhantomSpec::sample(size, seed);
  } else {
    spec = phantom_spec_from_json_text(read_text_file(spec_arg));
    if (seed != 0) spec.seed = seed;
  }

  DecompPhysics ph = physics_path.empty() ? default_physics() : load_physics(physics_path);
  NoiseSpec noise{sigma_high, sigma_low, noise_seed != 0 ? noise_seed : derive_seed(spec.seed, 1)};
  ph.noise_weight = noise_weights(noise);

  const auto [water, bone] = generate_phantom(spec);
  const AttenuationPair y = synthesize_measurements(water, bone, ph, noise);

  fs::create_directories(out_dir);
  const auto at = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  write_image(water.grid, at("water.matf"), kSemanticDensity);
  write_image(bone.grid, at("bone.matf"), kSemanticDensity);
  write_image(y.high, at("y_high.matf"), kSemanticAttenuation);
  write_image(y.low, at("y_low.matf"), kSemanticAttenuation);

  json manifest;
  manifest["spec"] = json::parse(phantom_spec_to_json_text(spec));
  manifest["noise"] = {{"sigma_high", noise.sigma_high},
                       {"sigma_low", noise.sigma_low},
                       {"seed", noise.seed}};
  manifest["physics"] = physics_to_json(ph);
  manifest["files"] = {{"water", "water.matf"},
                       {"bone", "bone.matf"},
                       {"y_high", "y_high.matf"},
                       {"y_low", "y_low.matf"}};
  write_text_file(at("manifest.json"), manifest.dump(2) + "\n");
  std::cout << "phantom written to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainSpec {
  DecompPhysics physics;
  RefinerVariant variant = RefinerVariant::DistinctCross;
  double beta = 3200.0;
  int iterations = 1;
  int patch_side = 4;
  int filters_per_group = 16;
  TrainConfig train;
  std::vector<TrainPair> pairs;
  std::string digest;
};

TrainSpec parse_train_config(const std::string& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError("invalid JSON in " + path + ": " + e.what());
  }

  // Collect every schema violation before giving up.
  std::vector<std::string> errors;
  auto require = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };

  TrainSpec spec;
  require(j.contains("physics"), "missing field: physics");
  require(j.contains("pairs") && j["pairs"].is_array() && !j["pairs"].empty(),
          "missing or empty field: pairs");
  require(j.contains("variant") && j["variant"].is_string(), "missing field: variant (string)");
  if (j.contains("variant") && j["variant"].is_string()) {
    try {
      spec.variant = variant_from_name(j["variant"].get<std::string>());
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  auto num_field = [&](const char* key, double lo, double hi, double def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_number()) {
      errors.push_back(std::string("field ") + key + " must be numeric");
      return def;
    }
    const double v = j[key].get<double>();
    if (v < lo || v > hi)
      errors.push_back(std::string("field ") + key + " out of range [" + std::to_string(lo) +
                       ", " + std::to_string(hi) + "]");
    return v;
  };
  spec.beta = num_field("beta", 0.0, 1e15, spec.beta);
  spec.iterations = static_cast<int>(num_field("iterations", 1, 10000, spec.iterations));
  spec.patch_side = static_cast<int>(num_field("patch_side", 1, 64, spec.patch_side));
  spec.filters_per_group =
      static_cast<int>(num_field("filters_per_group", 1, 4096, spec.filters_per_group));

  if (j.contains("train")) {
    const json& t = j["train"];
    auto tf = [&](const char* key, double def) {
      if (!t.contains(key)) return def;
      if (!t[key].is_number()) {
        errors.push_back(std::string("train field ") + key + " must be numeric");
        return def;
      }
      return t[key].get<double>();
    };
    spec.train.batch_size = static_cast<int>(tf("batch_size", spec.train.batch_size));
    spec.train.epochs = static_cast<int>(tf("epochs", spec.train.epochs));
    spec.train.lr0 = tf("lr0", spec.train.lr0);
    spec.train.lr_decay = tf("lr_decay", spec.train.lr_decay);
    spec.train.lr_period = static_cast<int>(tf("lr_period", spec.train.lr_period));
    spec.train.seed = static_cast<std::uint64_t>(tf("seed", 0.0));
    spec.train.filter_init_std = tf("filter_init_std", spec.train.filter_init_std);
    spec.train.alpha_init_water = tf("alpha_init_water_log", spec.train.alpha_init_water);
    spec.train.alpha_init_bone = tf("alpha_init_bone_log", spec.train.alpha_init_bone);
    spec.train.alpha_init_cross = tf("alpha_init_cross_log", spec.train.alpha_init_cross);
    try {
      spec.train.validate();
    } catch (const std::exception& e) {
      errors.push_back(std::string("train block: ") + e.what());
    }
  }

  std::vector<std::array<std::string, 4>> pair_paths;
  if (j.contains("pairs") && j["pairs"].is_array()) {
    for (size_t i = 0; i < j["pairs"].size(); ++i) {
      const json& p = j["pairs"][i];
      std::array<std::string, 4> paths;
      const char* keys[4] = {"water", "bone", "y_high", "y_low"};
      bool ok = true;
      for (int k = 0; k < 4; ++k) {
        if (!p.contains(keys[k]) || !p[keys[k]].is_string()) {
          errors.push_back("pairs[" + std::to_string(i) + "] missing field: " + keys[k]);
          ok = false;
          continue;
        }
        paths[k] = p[keys[k]].get<std::string>();
        if (!fs::exists(paths[k])) {
          errors.push_back("input file does not exist: " + paths[k]);
          ok = false;
        }
      }
      if (ok) pair_paths.push_back(std::move(paths));
    }
  }

  if (j.contains("physics")) {
    try {
      spec.physics = physics_from_json(j["physics"], path);
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }

  if (!errors.empty()) {
    std::string msg = "config errors in " + path + ":";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw UsageError(msg);
  }

  for (const auto& paths : pair_paths) {
    TrainPair tp{load_material(paths[0], Material::Water),
                 load_material(paths[1], Material::Bone), load_pair(paths[2], paths[3])};
    spec.pairs.push_back(std::move(tp));
  }

  char digest[32];
  std::snprintf(digest, sizeof(digest), "%016llx",
                static_cast<unsigned long long>(fnv1a64(text.data(), text.size())));
  spec.digest = digest;
  return spec;
}

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::string& curves_dir) {
  TrainSpec spec = parse_train_config(config_path);
  // The sampler requires batch <= corpus columns; clamp like a sane default
  // for small desk runs and say so.
  std::int64_t total = 0;
  for (const auto& p : spec.pairs) total += p.water_ref.grid.size();
  if (spec.train.batch_size > total) {
    std::cerr << "note: batch size " << spec.train.batch_size << " clamped to corpus size "
              << total << "\n";
    spec.train.batch_size = static_cast<int>(total);
  }

  TrainModelResult result =
      train_bcdnet(spec.pairs, spec.physics, spec.variant, spec.beta, spec.iterations,
                   spec.patch_side, spec.filters_per_group, spec.train, spec.digest);
  save_model(result.model, out_path);

  if (!curves_dir.empty()) {
    fs::create_directories(curves_dir);
    for (const auto& curve : result.curves)
      write_text_file((fs::path(curves_dir) / (curve.name + ".csv")).string(),
                      curve_csv(curve.records));
    std::string rmse_csv = "iteration,rmse_water,rmse_bone,final_train_loss\n";
    char buf[160];
    for (const auto& s : result.stats) {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", s.iteration, s.rmse_water,
                    s.rmse_bone, s.final_train_loss);
      rmse_csv += buf;
    }
    write_text_file((fs::path(curves_dir) / "rmse_train.csv").string(), rmse_csv);
  }

  std::cout << "model written to " << out_path << " (" << result.model.iteration_count()
            << " iterations, " << variant_name(result.model.variant) << ")\n";
  for (const auto& s : result.stats)
    std::printf("  iter %2d  rmse_water %.6f  rmse_bone %.6f\n", s.iteration, s.rmse_water,
                s.rmse_bone);
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_decompose(const std::string& model_path, const std::string& y_high,
                  const std::string& y_low, const std::string& physics_path,
                  const std::string& out_dir, std::optional<double> beta_override, bool emit_png,
                  bool emit_iterates, const std::string& truth_water_path,
                  const std::string& truth_bone_path, double png_water_lo, double png_water_hi,
                  double png_bone_lo, double png_bone_hi) {
  const BcdNetModel model = load_model(model_path);
  const AttenuationPair y = load_pair(y_high, y_low);
  const DecompPhysics ph = load_physics(physics_path);

  const DecompositionTrace trace = apply_model(model, y, ph, beta_override);
  const auto& final_pair = trace.iterates.back();

  fs::create_directories(out_dir);
  const auto at = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };
  write_image(final_pair.first.grid, at("water.matf"), kSemanticDensity);
  write_image(final_pair.second.grid, at("bone.matf"), kSemanticDensity);
  if (emit_png) {
    render_png(final_pair.first.grid, png_water_lo, png_water_hi, at("water.png"));
    render_png(final_pair.second.grid, png_bone_lo, png_bone_hi, at("bone.png"));
  }
  if (emit_iterates) {
    for (size_t i = 0; i < trace.iterates.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "iter%03zu_water.matf", i);
      write_image(trace.iterates[i].first.grid, at(name), kSemanticDensity);
      std::snprintf(name, sizeof(name), "iter%03zu_bone.matf", i);
      write_image(trace.iterates[i].second.grid, at(name), kSemanticDensity);
    }
  }
  if (!truth_water_path.empty() && !truth_bone_path.empty()) {
    const MaterialImage tw = load_material(truth_water_path, Material::Water);
    const MaterialImage tb = load_material(truth_bone_path, Material::Bone);
    const RegionOfInterest roi = tissue_roi(tw, tb);
    write_text_file(at("trace.csv"), trace_csv(trace, tw, tb, roi));
    std::printf("final rmse_water %.6f g/cm^3, rmse_bone %.6f g/cm^3\n",
                rmse(final_pair.first, tw, roi), rmse(final_pair.second, tb, roi));
  }
  std::cout << "decomposition written to " << out_dir << " (" << trace.iterates.size()
            << " trace entries)\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_baseline_ep(const std::string& y_high, const std::string& y_low,
                    const std::string& physics_path, const std::string& out_dir,
                    const EpConfig& cfg, const std::string& truth_water_path,
                    const std::string& truth_bone_path) {
  const AttenuationPair y = load_pair(y_high, y_low);
  const DecompPhysics ph = load_physics(physics_path);
  const auto x0 = direct_inversion(y, ph);
  const EpResult res = ep_decompose(y, ph, cfg, x0);

  fs::create_directories(out_dir);
  const auto at = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  write_image(res.water.grid, at("water.matf"), kSemanticDensity);
  write_image(res.bone.grid, at("bone.matf"), kSemanticDensity);
  std::string csv = "iteration,cost\n";
  char buf[96];
  for (size_t i = 0; i < res.cost_curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, res.cost_curve[i]);
    csv += buf;
  }
  write_text_file(at("cost.csv"), csv);

  if (!truth_water_path.empty() && !truth_bone_path.empty()) {
    const MaterialImage tw = load_material(truth_water_path, Material::Water);
    const MaterialImage tb = load_material(truth_bone_path, Material::Bone);
    const RegionOfInterest roi = tissue_roi(tw, tb);
    std::printf("ep rmse_water %.6f g/cm^3, rmse_bone %.6f g/cm^3 (direct inversion %.6f, %.6f)\n",
                rmse(res.water, tw, roi), rmse(res.bone, tb, roi), rmse(x0.first, tw, roi),
                rmse(x0.second, tb, roi));
  }
  std::cout << "baseline written to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_eval(const std::string& truth_water_path, const std::string& truth_bone_path,
             const std::string& roi_arg, const std::vector<std::string>& method_args,
             const std::string& out_csv, const std::string& estimate_water_path,
             const std::string& estimate_bone_path, double fail_above_1e3) {
  const MaterialImage tw = load_material(truth_water_path, Material::Water);
  const MaterialImage tb = load_material(truth_bone_path, Material::Bone);
  RegionOfInterest roi = (roi_arg.empty() || roi_arg == "auto")
                             ? tissue_roi(tw, tb)
                             : read_mask(roi_arg);

  int exit_code = 0;
  if (!estimate_water_path.empty() || !estimate_bone_path.empty()) {
    if (estimate_water_path.empty() || estimate_bone_path.empty())
      throw UsageError("--estimate-water and --estimate-bone must be given together");
    const double w = rmse(load_material(estimate_water_path, Material::Water), tw, roi);
    const double b = rmse(load_material(estimate_bone_path, Material::Bone), tb, roi);
    std::printf("rmse_water %.6f g/cm^3 (%.3f x 1e-3)\nrmse_bone  %.6f g/cm^3 (%.3f x 1e-3)\n", w,
                1e3 * w, b, 1e3 * b);
    if (fail_above_1e3 > 0 && (1e3 * w > fail_above_1e3 || 1e3 * b > fail_above_1e3)) {
      std::cerr << "rmse exceeds --fail-above threshold " << fail_above_1e3 << " x 1e-3\n";
      exit_code = kExitFailure;
    }
  }

  if (!method_args.empty()) {
    std::vector<MethodResult> methods;
    for (const auto& arg : method_args) {
      const auto eq = arg.find('=');
      const auto comma = arg.find(',', eq == std::string::npos ? 0 : eq);
      if (eq == std::string::npos || comma == std::string::npos)
        throw UsageError("--method expects name=water.matf,bone.matf, got: " + arg);
      MethodResult m;
      m.name = arg.substr(0, eq);
      m.water = load_material(arg.substr(eq + 1, comma - eq - 1), Material::Water);
      m.bone = load_material(arg.substr(comma + 1), Material::Bone);
      methods.push_back(std::move(m));
    }
    const std::string csv = comparison_csv(methods, tw, tb, roi);
    if (out_csv.empty())
      std::cout << csv;
    else
      write_text_file(out_csv, csv);
  }
  return exit_code;
}

// ---------------------------------------------------------------------------

int cmd_verify(int trials, std::uint64_t seed, bool inject_defect) {
  VerifyOptions opts;
  if (seed != 0) opts.seed = seed;
  if (trials > 0) {
    opts.trials_equivalence = trials;
    opts.trials_loss_bound = std::max(10, trials / 2);
    opts.trials_gradients = std::max(10, trials / 2);
    opts.trials_specialization = std::max(10, trials / 4);
    opts.trials_mbid = std::max(10, trials / 4);
  }
  opts.inject_gradient_defect = inject_defect;

  const auto results = run_verification(opts);
  for (const auto& r : results)
    std::printf("%s %-40s measured %.3e  bound %.3e  %s\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.measured, r.bound, r.detail.c_str());
  if (!all_passed(results)) {
    std::cerr << "verification FAILED\n";
    return kExitFailure;
  }
  std::cout << "all checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-domain dual-energy CT material decomposition toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker thread cap (default: BCDNET_THREADS or 1)");

  // phantom
  auto* ph = app.add_subcommand("phantom", "generate a synthetic phantom and measurements");
  std::string ph_spec = "default", ph_out, ph_physics;
  std::uint64_t ph_seed = 0, ph_noise_seed = 0;
  int ph_size = 128;
  double ph_sigma_high = kDefaultSigma, ph_sigma_low = kDefaultSigma;
  ph->add_option("--spec", ph_spec, "'default', 'sample', or a spec JSON path");
  ph->add_option("--out", ph_out, "output directory")->required();
  ph->add_option("--seed", ph_seed, "phantom seed");
  ph->add_option("--size", ph_size, "grid size in pixels");
  ph->add_option("--sigma-high", ph_sigma_high, "noise std on the high-energy image (cm^-1)");
  ph->add_option("--sigma-low", ph_sigma_low, "noise std on the low-energy image (cm^-1)");
  ph->add_option("--noise-seed", ph_noise_seed, "noise seed (default derives from --seed)");
  ph->add_option("--physics", ph_physics, "physics JSON (default: built-in desk physics)");

  // train
  auto* tr = app.add_subcommand("train", "train a decomposition model from a config file");
  std::string tr_config, tr_out, tr_curves;
  tr->add_option("--config", tr_config, "experiment config JSON")->required();
  tr->add_option("--out", tr_out, "output model path (.bcdn)")->required();
  tr->add_option("--curves", tr_curves, "directory for training-curve CSVs");

  // decompose
  auto* de = app.add_subcommand("decompose", "apply a trained model to an attenuation pair");
  std::string de_model, de_yh, de_yl, de_physics, de_out, de_tw, de_tb;
  double de_beta = -1.0;
  bool de_png = false, de_iterates = false;
  double de_pw_lo = 0.7, de_pw_hi = 1.3, de_pb_lo = 0.0, de_pb_hi = 0.8;
  de->add_option("--model", de_model)->required();
  de->add_option("--y-high", de_yh)->required();
  de->add_option("--y-low", de_yl)->required();
  de->add_option("--physics", de_physics)->required();
  de->add_option("--out", de_out)->required();
  de->add_option("--beta", de_beta, "override the stored regularization weight")
      ->check(CLI::NonNegativeNumber);
  de->add_flag("--emit-png", de_png, "export windowed PNGs of the final images");
  de->add_flag("--emit-iterates", de_iterates, "export every iterate as MATF");
  de->add_option("--truth-water", de_tw, "reference water image for the RMSE trace");
  de->add_option("--truth-bone", de_tb, "reference bone image for the RMSE trace");
  de->add_option("--png-water-lo", de_pw_lo);
  de->add_option("--png-water-hi", de_pw_hi);
  de->add_option("--png-bone-lo", de_pb_lo);
  de->add_option("--png-bone-hi", de_pb_hi);

  // baseline-ep
  auto* ep = app.add_subcommand("baseline-ep", "edge-preserving baseline decomposition");
  std::string ep_yh, ep_yl, ep_physics, ep_out, ep_tw, ep_tb;
  EpConfig ep_cfg;
  ep->add_option("--y-high", ep_yh)->required();
  ep->add_option("--y-low", ep_yl)->required();
  ep->add_option("--physics", ep_physics)->required();
  ep->add_option("--out", ep_out)->required();
  ep->add_option("--beta-water", ep_cfg.beta_water);
  ep->add_option("--beta-bone", ep_cfg.beta_bone);
  ep->add_option("--delta-water", ep_cfg.delta_water);
  ep->add_option("--delta-bone", ep_cfg.delta_bone);
  ep->add_option("--iters", ep_cfg.iterations);
  ep->add_option("--truth-water", ep_tw);
  ep->add_option("--truth-bone", ep_tb);

  // eval
  auto* ev = app.add_subcommand("eval", "RMSE evaluation and comparison tables");
  std::string ev_tw, ev_tb, ev_roi = "auto", ev_out, ev_ew, ev_eb;
  std::vector<std::string> ev_methods;
  double ev_fail_above = 0.0;
  ev->add_option("--truth-water", ev_tw)->required();
  ev->add_option("--truth-bone", ev_tb)->required();
  ev->add_option("--roi", ev_roi, "'auto' (tissue support + 2 px) or a mask MATF");
  ev->add_option("--method", ev_methods, "repeated name=water.matf,bone.matf entries");
  ev->add_option("--out", ev_out, "comparison CSV path (stdout when omitted)");
  ev->add_option("--estimate-water", ev_ew);
  ev->add_option("--estimate-bone", ev_eb);
  ev->add_option("--fail-above", ev_fail_above,
                 "exit 1 if either RMSE exceeds this (1e-3 g/cm^3 units)");

  // verify
  auto* vf = app.add_subcommand("verify", "run the numerical verification suites");
  int vf_trials = 0;
  std::uint64_t vf_seed = 0;
  bool vf_defect = false;
  vf->add_option("--trials", vf_trials, "base trial count (default 200)");
  vf->add_option("--seed", vf_seed);
  vf->add_flag("--inject-grad-defect", vf_defect,
               "test fixture: corrupt one gradient entry so the suite must fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (threads > 0) set_worker_count(threads);

  try {
    if (*ph)
      return cmd_phantom(ph_spec, ph_out, ph_seed, ph_size, ph_sigma_high, ph_sigma_low,
                         ph_noise_seed, ph_physics);
    if (*tr) return cmd_train(tr_config, tr_out, tr_curves);
    if (*de)
      return cmd_decompose(de_model, de_yh, de_yl, de_physics, de_out,
                           de_beta >= 0 ? std::optional<double>(de_beta) : std::nullopt, de_png,
                           de_iterates, de_tw, de_tb, de_pw_lo, de_pw_hi, de_pb_lo, de_pb_hi);
    if (*ep) return cmd_baseline_ep(ep_yh, ep_yl, ep_physics, ep_out, ep_cfg, ep_tw, ep_tb);
    if (*ev)
      return cmd_eval(ev_tw, ev_tb, ev_roi, ev_methods, ev_out, ev_ew, ev_eb, ev_fail_above);
    if (*vf) return cmd_verify(vf_trials, vf_seed, vf_defect);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return 0;
}
