#include "styleadapt/da_trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "epoch_stream.hpp"
#include "styleadapt/errors.hpp"

namespace styleadapt {
namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointManifest = "checkpoint.json";
constexpr const char* kGenA = "gen_a.pt";
constexpr const char* kGenB = "gen_b.pt";
constexpr const char* kDiscA = "disc_a.pt";
constexpr const char* kDiscB = "disc_b.pt";
constexpr const char* kStatsSource = "stats_source.json";
constexpr const char* kStatsTarget = "stats_target.json";

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

std::vector<torch::Tensor> joint_parameters(torch::nn::Module& a, torch::nn::Module& b) {
  auto params = a.parameters();
  auto more = b.parameters();
  params.insert(params.end(), more.begin(), more.end());
  return params;
}

double checked_value(const torch::Tensor& t, const char* name, std::int64_t iter) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "non-finite loss term '" << name << "' at iteration " << iter;
    throw NumericError(msg.str());
  }
  return v;
}

using detail::EpochStream;

std::vector<torch::Tensor> load_domain(const Manifest& manifest, Domain domain) {
  std::vector<torch::Tensor> out;
  for (const auto& e : manifest.select(domain, Split::kTrain)) {
    ManifestEntry unlabeled = e;
    unlabeled.label_path.reset();  // labels never enter style training
    out.push_back(tile_to_tensor(load_entry(unlabeled)));
  }
  return out;
}

void write_checkpoint_dir(const TrainState& state, Generator& ga, Generator& gb, Discriminator& da,
                          Discriminator& db, const fs::path& dir) {
  fs::create_directories(dir);
  torch::save(ga, (dir / kGenA).string());
  torch::save(gb, (dir / kGenB).string());
  torch::save(da, (dir / kDiscA).string());
  torch::save(db, (dir / kDiscB).string());
  save_domain_stats(state.stats_source(), dir / kStatsSource);
  save_domain_stats(state.stats_target(), dir / kStatsTarget);
  nlohmann::json cfg = state.config();
  nlohmann::json meta{
      {"format", "styleadapt-checkpoint-1"},
      {"iteration", state.iteration()},
      {"config", cfg},
      {"config_hash", config_hash(cfg)},
      {"files",
       {{"gen_a", kGenA}, {"gen_b", kGenB}, {"disc_a", kDiscA}, {"disc_b", kDiscB},
        {"stats_source", kStatsSource}, {"stats_target", kStatsTarget}}},
  };
  std::ofstream out(dir / kCheckpointManifest, std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint manifest in " + dir.string());
  out << meta.dump(2) << '\n';
}

nlohmann::json read_checkpoint_meta(const fs::path& dir) {
  std::ifstream in(dir / kCheckpointManifest);
  if (!in) throw CheckpointError("missing checkpoint manifest in " + dir.string());
  try {
    auto meta = nlohmann::json::parse(in);
    if (config_hash(meta.at("config")) != meta.at("config_hash").get<std::string>()) {
      throw CheckpointError("checkpoint config hash mismatch in " + dir.string());
    }
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

template <typename Holder>
void load_module(Holder& module, const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("missing parameter archive: " + path.string());
  try {
    torch::load(module, path.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot load " + path.string() + ": " + e.what_without_backtrace());
  }
}

}  // namespace

void ScheduleConfig::validate() const {
  if (!(lr_base > 0.0)) throw ConfigError("lr_base must be positive");
  if (!(0 < iter_decay_start && iter_decay_start < iter_max)) {
    throw ConfigError("schedule requires 0 < iter_decay_start < iter_max");
  }
}

double lr_linear(const ScheduleConfig& cfg, std::int64_t iter) {
  cfg.validate();
  if (iter < 0 || iter > cfg.iter_max) throw PreconditionError("lr_linear: iteration out of range");
  if (iter <= cfg.iter_decay_start) return cfg.lr_base;
  return cfg.lr_base * static_cast<double>(cfg.iter_max - iter) /
         static_cast<double>(cfg.iter_max - cfg.iter_decay_start);
}

void TrainerConfig::validate() const {
  generator.validate();
  discriminator.validate();
  weights.validate();
  generator_schedule().validate();
  discriminator_schedule().validate();
  if (generator.in_channels != discriminator.in_channels || generator.out_channels != generator.in_channels) {
    throw ConfigError("generator and discriminator channel counts disagree");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(decay_rate > 0.0 && decay_rate < 1.0)) throw ConfigError("decay_rate must lie strictly in (0, 1)");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be nonnegative");
}

void to_json(nlohmann::json& j, const TrainerConfig& c) {
  j = nlohmann::json{{"generator", c.generator},
                     {"discriminator", c.discriminator},
                     {"weights", c.weights},
                     {"iter_max", c.iter_max},
                     {"iter_decay_start", c.iter_decay_start},
                     {"lr_generator", c.lr_generator},
                     {"lr_discriminator", c.lr_discriminator},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"decay_rate", c.decay_rate},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"progress_every", c.progress_every}};
}

void from_json(const nlohmann::json& j, TrainerConfig& c) {
  c = TrainerConfig{};
  if (j.contains("generator")) j.at("generator").get_to(c.generator);
  if (j.contains("discriminator")) j.at("discriminator").get_to(c.discriminator);
  if (j.contains("weights")) j.at("weights").get_to(c.weights);
  c.iter_max = j.value("iter_max", c.iter_max);
  c.iter_decay_start = j.value("iter_decay_start", c.iter_decay_start);
  c.lr_generator = j.value("lr_generator", c.lr_generator);
  c.lr_discriminator = j.value("lr_discriminator", c.lr_discriminator);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.decay_rate = j.value("decay_rate", c.decay_rate);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.progress_every = j.value("progress_every", c.progress_every);
}

std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

GeneratorObjective generator_objective(Generator& gen_a, Generator& gen_b, Discriminator& disc_a,
                                       Discriminator& disc_b, const torch::Tensor& source,
                                       const torch::Tensor& target, const LossWeights& weights,
                                       const StepObserver& observer) {
  auto styled = [&](const char* name) {
    if (observer) observer({StepPhase::kStyleApplied, name});
  };
  GeneratorObjective o;
  auto enc_a = gen_a->encode(source);
  auto enc_b = gen_b->encode(target);
  o.source_stats = channel_stats(enc_a.bottleneck);
  o.target_stats = channel_stats(enc_b.bottleneck);

  styled("fake_b");
  o.fake_b = gen_b->decode(adain(enc_a.bottleneck, o.source_stats, o.target_stats), enc_a.skips);
  styled("fake_a");
  o.fake_a = gen_a->decode(adain(enc_b.bottleneck, o.target_stats, o.source_stats), enc_b.skips);

  o.adv_st = gan_loss_generator(disc_b->forward(o.fake_b));
  o.adv_ts = gan_loss_generator(disc_a->forward(o.fake_a));

  // Translate the fakes back, each styled by the other fake's statistics.
  auto enc_fake_b = gen_b->encode(o.fake_b);
  auto enc_fake_a = gen_a->encode(o.fake_a);
  const auto fake_b_stats = channel_stats(enc_fake_b.bottleneck);
  const auto fake_a_stats = channel_stats(enc_fake_a.bottleneck);
  styled("rec_source");
  o.rec_source = gen_a->decode(adain(enc_fake_b.bottleneck, fake_b_stats, fake_a_stats), enc_fake_b.skips);
  styled("rec_target");
  o.rec_target = gen_b->decode(adain(enc_fake_a.bottleneck, fake_a_stats, fake_b_stats), enc_fake_a.skips);
  o.cross = l1(source, o.rec_source) + l1(target, o.rec_target);

  o.self_source = gen_a->decode(enc_a.bottleneck, enc_a.skips);
  o.self_target = gen_b->decode(enc_b.bottleneck, enc_b.skips);
  o.self = l1(source, o.self_source) + l1(target, o.self_target);

  o.grad = gradient_loss(source, o.fake_b) + gradient_loss(target, o.fake_a);
  o.total = weighted_generator_loss(o.adv_st, o.adv_ts, o.cross, o.self, o.grad, weights);
  return o;
}

TrainState::TrainState(TrainerConfig cfg)
    : cfg_(std::move(cfg)),
      gen_a_(nullptr),
      gen_b_(nullptr),
      disc_a_(nullptr),
      disc_b_(nullptr) {
  cfg_.validate();
  torch::manual_seed(cfg_.seed);
  gen_a_ = build_generator(cfg_.generator, cfg_.seed * 4 + 1);
  gen_b_ = build_generator(cfg_.generator, cfg_.seed * 4 + 2);
  disc_a_ = build_discriminator(cfg_.discriminator, cfg_.seed * 4 + 3);
  disc_b_ = build_discriminator(cfg_.discriminator, cfg_.seed * 4 + 4);
  auto betas = std::make_tuple(cfg_.beta1, cfg_.beta2);
  opt_g_ = std::make_unique<torch::optim::Adam>(joint_parameters(*gen_a_, *gen_b_),
                                                torch::optim::AdamOptions(cfg_.lr_generator).betas(betas));
  opt_d_ = std::make_unique<torch::optim::Adam>(joint_parameters(*disc_a_, *disc_b_),
                                                torch::optim::AdamOptions(cfg_.lr_discriminator).betas(betas));
  const auto channels = static_cast<std::size_t>(cfg_.generator.residual_channels);
  stats_source_ = DomainStats::zeros(channels, cfg_.decay_rate);
  stats_target_ = DomainStats::zeros(channels, cfg_.decay_rate);
}

void TrainState::notify(StepPhase phase, std::string detail) {
  if (observer_) observer_({phase, std::move(detail)});
}

LossReport TrainState::step(const torch::Tensor& source, const torch::Tensor& target) {
  if (iteration_ >= cfg_.iter_max) throw PreconditionError("training already reached iter_max");
  lr_g_ = lr_linear(cfg_.generator_schedule(), iteration_);
  lr_d_ = lr_linear(cfg_.discriminator_schedule(), iteration_);
  set_lr(*opt_g_, lr_g_);
  set_lr(*opt_d_, lr_d_);

  set_requires_grad(*disc_a_, false);
  set_requires_grad(*disc_b_, false);
  auto obj = generator_objective(gen_a_, gen_b_, disc_a_, disc_b_, source, target, cfg_.weights, observer_);
  LossTerms terms;
  terms.adv_st = checked_value(obj.adv_st, "adv_g_st", iteration_);
  terms.adv_ts = checked_value(obj.adv_ts, "adv_g_ts", iteration_);
  terms.cross = checked_value(obj.cross, "cross", iteration_);
  terms.self = checked_value(obj.self, "self", iteration_);
  terms.grad = checked_value(obj.grad, "grad", iteration_);
  LossReport report = total_generator_loss(terms, cfg_.weights);

  notify(StepPhase::kGeneratorUpdateBegin);
  opt_g_->zero_grad();
  obj.total.backward();
  opt_g_->step();
  notify(StepPhase::kGeneratorUpdateEnd);

  set_requires_grad(*disc_a_, true);
  set_requires_grad(*disc_b_, true);
  notify(StepPhase::kDiscriminatorUpdateBegin);
  auto fake_a = obj.fake_a.detach();
  auto fake_b = obj.fake_b.detach();
  auto loss_d_s = gan_loss_discriminator(disc_a_->forward(source), disc_a_->forward(fake_a));
  auto loss_d_t = gan_loss_discriminator(disc_b_->forward(target), disc_b_->forward(fake_b));
  report.loss_d_s = checked_value(loss_d_s, "loss_d_s", iteration_);
  report.loss_d_t = checked_value(loss_d_t, "loss_d_t", iteration_);
  opt_d_->zero_grad();
  (loss_d_s + loss_d_t).backward();
  opt_d_->step();
  notify(StepPhase::kDiscriminatorUpdateEnd);

  update_global_inplace(stats_source_, obj.source_stats);
  update_global_inplace(stats_target_, obj.target_stats);

  if (capture_) {
    trace_ = StepTrace{source.detach().clone(),         target.detach().clone(),
                       fake_a.clone(),                  fake_b.clone(),
                       obj.rec_source.detach().clone(), obj.rec_target.detach().clone(),
                       obj.self_source.detach().clone(), obj.self_target.detach().clone()};
  }
  ++iteration_;
  return report;
}

LossReport train_step(TrainState& state, const Tile& source, const Tile& target) {
  for (const Tile* t : {&source, &target}) {
    if (!t->is_normalized()) throw PreconditionError("train_step expects tiles normalized to [-1, 1]");
  }
  return state.step(tile_to_tensor(source), tile_to_tensor(target));
}

void TrainState::save_checkpoint(const fs::path& dir) const {
  auto& self = const_cast<TrainState&>(*this);  // torch::save takes non-const holders
  write_checkpoint_dir(*this, self.gen_a_, self.gen_b_, self.disc_a_, self.disc_b_, dir);
}

TrainState TrainState::from_checkpoint(const fs::path& dir) {
  auto meta = read_checkpoint_meta(dir);
  TrainState state(meta.at("config").get<TrainerConfig>());
  load_module(state.gen_a_, dir / kGenA);
  load_module(state.gen_b_, dir / kGenB);
  load_module(state.disc_a_, dir / kDiscA);
  load_module(state.disc_b_, dir / kDiscB);
  state.stats_source_ = load_domain_stats(dir / kStatsSource);
  state.stats_target_ = load_domain_stats(dir / kStatsTarget);
  state.iteration_ = meta.at("iteration").get<std::int64_t>();
  const auto c = static_cast<std::size_t>(state.cfg_.generator.residual_channels);
  if (state.stats_source_.channels() != c || state.stats_target_.channels() != c) {
    throw CheckpointError("domain stats length does not match the bottleneck width");
  }
  return state;
}

TrainOutputs train(const Manifest& manifest, const TrainerConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  if (manifest.select(Domain::kSource, Split::kTrain).empty() ||
      manifest.select(Domain::kTarget, Split::kTrain).empty()) {
    throw ConfigError("training needs train tiles from both domains");
  }
  auto sources = load_domain(manifest, Domain::kSource);
  auto targets = load_domain(manifest, Domain::kTarget);
  for (const auto* set : {&sources, &targets}) {
    for (const auto& t : *set) {
      if (t.min().item<float>() < -1.0f || t.max().item<float>() > 1.0f) {
        throw DataError("training tiles must be normalized to [-1, 1]");
      }
    }
  }

  fs::create_directories(out_dir);
  TrainOutputs outputs{out_dir / "checkpoint", out_dir / "loss_log.csv", out_dir / "lr_log.csv"};
  TrainState state(cfg);
  LossLog log(outputs.loss_log);
  std::ofstream lr_log(outputs.lr_log, std::ios::trunc);
  lr_log << "iter,lr_g,lr_d\n";

  EpochStream source_stream(sources.size(), cfg.seed * 2 + 11);
  EpochStream target_stream(targets.size(), cfg.seed * 2 + 12);
  while (state.iteration() < cfg.iter_max) {
    const auto iter = state.iteration();
    const auto& s = sources[source_stream.next()];
    const auto& t = targets[target_stream.next()];
    LossReport r = state.step(s, t);
    log.append(iter, r);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g\n", static_cast<long long>(iter), state.lr_generator(),
                  state.lr_discriminator());
    lr_log << buf;
    if (cfg.progress_every > 0 && (state.iteration() % cfg.progress_every == 0)) {
      std::cerr << "[train-da] iter " << state.iteration() << "/" << cfg.iter_max << "  " << LossLog::format_row(iter, r)
                << '\n';
    }
    if (cfg.checkpoint_every > 0 && state.iteration() % cfg.checkpoint_every == 0 &&
        state.iteration() < cfg.iter_max) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld", static_cast<long long>(state.iteration()));
      state.save_checkpoint(out_dir / name);
    }
  }
  state.save_checkpoint(outputs.checkpoint);
  return outputs;
}

Stylizer::Stylizer(Generator gen_a, Generator gen_b, DomainStats target_stats)
    : gen_a_(std::move(gen_a)), gen_b_(std::move(gen_b)), target_stats_(std::move(target_stats)) {
  if (target_stats_.channels() != static_cast<std::size_t>(gen_a_->config().residual_channels)) {
    throw CheckpointError("target statistics do not match the generator bottleneck");
  }
}

Stylizer Stylizer::load(const fs::path& dir) {
  auto meta = read_checkpoint_meta(dir);
  auto cfg = meta.at("config").get<TrainerConfig>();
  Generator ga(cfg.generator), gb(cfg.generator);
  load_module(ga, dir / kGenA);
  load_module(gb, dir / kGenB);
  if (!fs::exists(dir / kStatsTarget)) throw CheckpointError("missing stats sidecar: " + (dir / kStatsTarget).string());
  return Stylizer(ga, gb, load_domain_stats(dir / kStatsTarget));
}

ChannelStats Stylizer::content_stats(const Tile& source) const {
  torch::NoGradGuard no_grad;
  return channel_stats(gen_a_->encode(tile_to_tensor(source)).bottleneck);
}

Tile Stylizer::stylize_with(const Tile& source, const ChannelStats& style) const {
  torch::NoGradGuard no_grad;
  auto enc = gen_a_->encode(tile_to_tensor(source));
  auto stats = channel_stats(enc.bottleneck);
  auto out = gen_b_->decode(adain(enc.bottleneck, stats, style), enc.skips);
  Tile tile = tensor_to_tile(out);
  tile.labels = source.labels;
  return tile;
}

Tile Stylizer::stylize(const Tile& source) const { return stylize_with(source, target_stats_.as_channel_stats()); }

Tile Stylizer::translate_unstyled(const Tile& source) const {
  torch::NoGradGuard no_grad;
  auto enc = gen_a_->encode(tile_to_tensor(source));
  Tile tile = tensor_to_tile(gen_b_->decode(enc.bottleneck, enc.skips));
  tile.labels = source.labels;
  return tile;
}

Tile stylize(const fs::path& checkpoint_dir, const Tile& source) {
  return Stylizer::load(checkpoint_dir).stylize(source);
}

Manifest stylize_manifest(const fs::path& checkpoint_dir, const Manifest& manifest, const fs::path& out_dir) {
  const auto stylizer = Stylizer::load(checkpoint_dir);
  Manifest out;
  for (const auto& e : manifest.select(Domain::kSource)) {
    Tile styled = stylizer.stylize(load_entry(e));
    const fs::path path = out_dir / "source" / e.tile_path.filename();
    write_tile(styled, path);
    std::optional<fs::path> label;
    if (styled.labels) label = label_path_for(path);
    out.entries.push_back({path, Domain::kSource, e.split, label});
  }
  write_manifest(out, out_dir / "manifest.csv");
  return out;
}

}  // namespace styleadapt
