#include "dect/bcdnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dect/eval.hpp"
#include "dect/rng.hpp"
#include "json.hpp"

namespace dect {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'B', 'C', 'D', 'N'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void BcdNetModel::validate() const {
  if (iterations.empty()) throw std::runtime_error("model must hold at least one iteration");
  if (!(beta >= 0)) throw std::runtime_error("model beta must be nonnegative");
  for (const auto& p : iterations) {
    p.validate();
    if (p.variant != variant || p.patch_side != patch_side ||
        p.filters_per_group != filters_per_group)
      throw std::runtime_error("model iterations disagree on variant or geometry");
  }
}

TrainModelResult train_bcdnet(const std::vector<TrainPair>& pairs, const DecompPhysics& physics,
                              RefinerVariant variant, double beta, int iterations,
                              int patch_side, int filters_per_group, const TrainConfig& cfg,
                              const std::string& config_digest) {
  if (pairs.empty()) throw std::invalid_argument("training needs at least one pair");
  if (iterations < 1) throw std::invalid_argument("iteration count must be >= 1");
  if (!(beta >= 0)) throw std::invalid_argument("beta must be nonnegative");
  for (const auto& p : pairs) {
    p.measurements.validate();
    if (!p.water_ref.grid.same_geometry(p.bone_ref.grid) ||
        !p.water_ref.grid.same_geometry(p.measurements.high))
      throw std::invalid_argument("training pair images are not co-registered");
  }

  std::vector<std::pair<MaterialImage, MaterialImage>> references;
  references.reserve(pairs.size());
  std::vector<RegionOfInterest> rois;
  for (const auto& p : pairs) {
    references.push_back({p.water_ref, p.bone_ref});
    rois.push_back(tissue_roi(p.water_ref, p.bone_ref));
  }

  auto mean_rmse = [&](const std::vector<std::pair<MaterialImage, MaterialImage>>& xs,
                       double& water, double& bone) {
    water = bone = 0.0;
    for (size_t l = 0; l < xs.size(); ++l) {
      water += rmse(xs[l].first, pairs[l].water_ref, rois[l]);
      bone += rmse(xs[l].second, pairs[l].bone_ref, rois[l]);
    }
    water /= static_cast<double>(xs.size());
    bone /= static_cast<double>(xs.size());
  };

  TrainModelResult out;
  out.model.variant = variant;
  out.model.patch_side = patch_side;
  out.model.filters_per_group = filters_per_group;
  out.model.beta = beta;
  out.model.seed = cfg.seed;
  out.model.train_config = cfg;
  out.model.config_digest = config_digest;

  std::vector<std::pair<MaterialImage, MaterialImage>> current;
  current.reserve(pairs.size());
  for (const auto& p : pairs) current.push_back(direct_inversion(p.measurements, physics));
  {
    IterationStats s;
    s.iteration = 0;
    mean_rmse(current, s.rmse_water, s.rmse_bone);
    out.stats.push_back(s);
  }

  for (int i = 1; i <= iterations; ++i) {
    // Each iteration's refiner starts from a fresh seeded initialization.
    TrainConfig iter_cfg = cfg;
    iter_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    const TrainingCorpus corpus = build_training_corpus(references, current, patch_side);
    TrainResult trained;
    try {
      trained = train_refiner(corpus, variant, patch_side, filters_per_group, iter_cfg);
    } catch (const std::exception& e) {
      throw std::runtime_error("refiner training failed at iteration " + std::to_string(i) +
                               ": " + e.what());
    }
    double final_loss = 0.0;
    for (auto& curve : trained.curves) {
      if (!curve.records.empty()) final_loss += curve.records.back().loss;
      curve.name = "iter" + std::to_string(i) + "_" + curve.name;
      out.curves.push_back(std::move(curve));
    }

    for (size_t l = 0; l < pairs.size(); ++l) {
      const auto z = refine(trained.params, current[l].first, current[l].second);
      current[l] = mbid_update(pairs[l].measurements, z, physics, beta);
      try {
        current[l].first.grid.validate("iterate (water)");
        current[l].second.grid.validate("iterate (bone)");
      } catch (const std::exception& e) {
        throw std::runtime_error("non-finite iterate at iteration " + std::to_string(i) + ": " +
                                 e.what());
      }
    }

    IterationStats s;
    s.iteration = i;
    mean_rmse(current, s.rmse_water, s.rmse_bone);
    s.final_train_loss = final_loss;
    out.stats.push_back(s);
    out.model.iterations.push_back(std::move(trained.params));
  }
  out.model.validate();
  return out;
}

namespace {

void append_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t take_u32le(const std::string& bytes, size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

void append_doubles(std::string& out, const std::vector<double>& v) {
  const size_t at = out.size();
  out.resize(at + v.size() * 8);
  std::memcpy(out.data() + at, v.data(), v.size() * 8);
}

}  // namespace

void save_model(const BcdNetModel& model, const std::string& path) {
  model.validate();
  json meta;
  meta["variant"] = variant_name(model.variant);
  meta["patch_side"] = model.patch_side;
  meta["filters_per_group"] = model.filters_per_group;
  meta["beta"] = model.beta;
  meta["iterations"] = model.iteration_count();
  meta["seed"] = model.seed;
  meta["config_digest"] = model.config_digest;
  meta["train"] = {{"batch_size", model.train_config.batch_size},
                   {"epochs", model.train_config.epochs},
                   {"lr0", model.train_config.lr0},
                   {"lr_decay", model.train_config.lr_decay},
                   {"lr_period", model.train_config.lr_period},
                   {"filter_init_std", model.train_config.filter_init_std},
                   {"alpha_init_water", model.train_config.alpha_init_water},
                   {"alpha_init_bone", model.train_config.alpha_init_bone},
                   {"alpha_init_cross", model.train_config.alpha_init_cross}};
  const std::string header = meta.dump();

  std::string out(kMagic, 4);
  append_u32le(out, kVersion);
  append_u32le(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& p : model.iterations) {
    append_doubles(out, p.decode.data());
    append_doubles(out, p.encode.data());
    append_doubles(out, p.log_thresholds);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open model file for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f.good()) throw std::runtime_error("write failure: " + path);
}

BcdNetModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("not a BCDN model file (magic mismatch): " + path);
  const std::uint32_t version = take_u32le(bytes, 4);
  if (version > kVersion)
    throw std::runtime_error("unsupported model version " + std::to_string(version) + ": " + path);
  const std::uint32_t hlen = take_u32le(bytes, 8);
  if (bytes.size() < 12 + static_cast<size_t>(hlen))
    throw std::runtime_error("truncated model metadata: " + path);

  json meta;
  try {
    meta = json::parse(bytes.substr(12, hlen));
  } catch (const json::exception& e) {
    throw std::runtime_error("model metadata is not valid JSON (" + std::string(e.what()) +
                             "): " + path);
  }

  BcdNetModel model;
  try {
    model.variant = variant_from_name(meta.at("variant").get<std::string>());
    model.patch_side = meta.at("patch_side").get<int>();
    model.filters_per_group = meta.at("filters_per_group").get<int>();
    model.beta = meta.at("beta").get<double>();
    model.seed = meta.at("seed").get<std::uint64_t>();
    model.config_digest = meta.value("config_digest", std::string());
    const json& t = meta.at("train");
    model.train_config.batch_size = t.at("batch_size").get<int>();
    model.train_config.epochs = t.at("epochs").get<int>();
    model.train_config.lr0 = t.at("lr0").get<double>();
    model.train_config.lr_decay = t.at("lr_decay").get<double>();
    model.train_config.lr_period = t.at("lr_period").get<int>();
    model.train_config.filter_init_std = t.at("filter_init_std").get<double>();
    model.train_config.alpha_init_water = t.at("alpha_init_water").get<double>();
    model.train_config.alpha_init_bone = t.at("alpha_init_bone").get<double>();
    model.train_config.alpha_init_cross = t.at("alpha_init_cross").get<double>();
    model.train_config.seed = model.seed;
  } catch (const json::exception& e) {
    throw std::runtime_error("model metadata field error (" + std::string(e.what()) + "): " + path);
  }
  const int iterations = meta.at("iterations").get<int>();
  if (iterations < 1 || model.patch_side < 1 || model.filters_per_group < 1)
    throw std::runtime_error("model metadata is inconsistent: " + path);

  const int R = model.patch_side * model.patch_side;
  const int K = model.filters_per_group;
  const size_t per_iter = (static_cast<size_t>(2 * R) * 2 * K) * 2 + 2 * K;
  size_t at = 12 + hlen;
  if (bytes.size() - at != per_iter * 8 * static_cast<size_t>(iterations))
    throw std::runtime_error("truncated model file: " + path);

  auto take = [&](size_t n) {
    std::vector<double> v(n);
    std::memcpy(v.data(), bytes.data() + at, n * 8);
    at += n * 8;
    return v;
  };
  for (int i = 0; i < iterations; ++i) {
    Mat decode(2 * R, 2 * K), encode(2 * K, 2 * R);
    decode.data() = take(static_cast<size_t>(2 * R) * 2 * K);
    encode.data() = take(static_cast<size_t>(2 * K) * 2 * R);
    std::vector<double> alpha = take(static_cast<size_t>(2 * K));
    RefinerParams p;
    p.variant = model.variant;
    p.patch_side = model.patch_side;
    p.filters_per_group = model.filters_per_group;
    p.decode = std::move(decode);
    p.encode = std::move(encode);
    p.log_thresholds = std::move(alpha);
    p.validate();  // stored parameters must already satisfy the variant ties
    model.iterations.push_back(std::move(p));
  }
  model.validate();
  return model;
}

DecompositionTrace apply_model(const BcdNetModel& model, const AttenuationPair& y,
                               const DecompPhysics& physics,
                               std::optional<double> beta_override) {
  model.validate();
  y.validate();
  if (model.patch_side > y.high.width || model.patch_side > y.high.height)
    throw std::invalid_argument("model patch size exceeds the image");
  const double beta = beta_override.value_or(model.beta);
  if (!(beta >= 0)) throw std::invalid_argument("beta override must be nonnegative");

  DecompositionTrace trace;
  trace.iterates.push_back(direct_inversion(y, physics));
  for (size_t i = 0; i < model.iterations.size(); ++i) {
    const auto& x = trace.iterates.back();
    auto z = refine(model.iterations[i], x.first, x.second);
    auto next = mbid_update(y, z, physics, beta);
    next.first.grid.validate("decomposition iterate (water)");
    next.second.grid.validate("decomposition iterate (bone)");
    trace.iterates.push_back(std::move(next));
  }
  return trace;
}

}  // namespace dect
