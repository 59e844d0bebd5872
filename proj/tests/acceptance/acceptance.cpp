// Acceptance suite: one PASS/FAIL line per criterion. Runs the full desk
// pipeline twice (about half an hour on one CPU core).
//
//   acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "styleadapt/da_trainer.hpp"
#include "styleadapt/errors.hpp"
#include "styleadapt/pipeline.hpp"

using namespace styleadapt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++g_failures;
  std::printf("[%s] criterion %d: %s -- %s\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p, std::size_t limit) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (out.size() < limit && std::getline(in, line)) out.push_back(line);
  return out;
}

// ---- oracles ---------------------------------------------------------------

// Per-channel mean and sqrt(population variance + eps) by straight loops.
void stats_oracle(const torch::Tensor& x, std::vector<double>& mu, std::vector<double>& sigma) {
  const auto t = x.squeeze(0).to(torch::kFloat64).contiguous();
  const auto c = t.size(0), n = t.size(1) * t.size(2);
  const double* p = t.data_ptr<double>();
  mu.assign(c, 0.0);
  sigma.assign(c, 0.0);
  for (std::int64_t k = 0; k < c; ++k) {
    double s = 0;
    for (std::int64_t i = 0; i < n; ++i) s += p[k * n + i];
    mu[k] = s / n;
    double v = 0;
    for (std::int64_t i = 0; i < n; ++i) v += (p[k * n + i] - mu[k]) * (p[k * n + i] - mu[k]);
    sigma[k] = std::sqrt(v / n + kStatsEpsilon);
  }
}

// 3x3 Sobel with mirror borders on a C x H x W double array; returns
// [2C][H][W] with the horizontal response first.
std::vector<double> sobel_oracle(const std::vector<double>& img, int c, int h, int w) {
  auto at = [&](int ch, int y, int x) {
    y = y < 0 ? -y : (y >= h ? 2 * h - 2 - y : y);
    x = x < 0 ? -x : (x >= w ? 2 * w - 2 - x : x);
    return img[(ch * h + y) * w + x];
  };
  std::vector<double> out(static_cast<std::size_t>(2 * c * h * w));
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double gx = (at(ch, y - 1, x + 1) + 2 * at(ch, y, x + 1) + at(ch, y + 1, x + 1)) -
                          (at(ch, y - 1, x - 1) + 2 * at(ch, y, x - 1) + at(ch, y + 1, x - 1));
        const double gy = (at(ch, y + 1, x - 1) + 2 * at(ch, y + 1, x) + at(ch, y + 1, x + 1)) -
                          (at(ch, y - 1, x - 1) + 2 * at(ch, y - 1, x) + at(ch, y - 1, x + 1));
        out[((2 * ch) * h + y) * w + x] = gx;
        out[((2 * ch + 1) * h + y) * w + x] = gy;
      }
    }
  }
  return out;
}

std::vector<double> to_vec(const torch::Tensor& t) {
  const auto d = t.detach().to(torch::kFloat64).contiguous().view({-1});
  return {d.data_ptr<double>(), d.data_ptr<double>() + d.numel()};
}

double mean_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// W1 between two histograms on the integer support 0..255.
double wasserstein1(const BandHistogram& a, const BandHistogram& b) {
  const double na = std::accumulate(a.begin(), a.end(), 0.0), nb = std::accumulate(b.begin(), b.end(), 0.0);
  double ca = 0, cb = 0, w = 0;
  for (int v = 0; v < 255; ++v) {
    ca += a[v] / na;
    cb += b[v] / nb;
    w += std::abs(ca - cb);
  }
  return w;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Sobel magnitude summed over bands, from a normalized float tile.
std::vector<double> edge_magnitude(const Tile& t) {
  std::vector<double> img(t.f32().begin(), t.f32().end());
  const int c = static_cast<int>(t.bands), h = static_cast<int>(t.height), w = static_cast<int>(t.width);
  const auto g = sobel_oracle(img, c, h, w);
  std::vector<double> mag(static_cast<std::size_t>(h * w), 0.0);
  for (int k = 0; k < 2 * c; ++k)
    for (int i = 0; i < h * w; ++i) mag[i] += g[k * h * w + i] * g[k * h * w + i];
  for (auto& v : mag) v = std::sqrt(v);
  return mag;
}

Tile as_float(const Tile& t) { return t.dtype() == DType::kUInt8 ? normalize(t) : t; }
Tile as_u8(const Tile& t) { return t.dtype() == DType::kFloat32 ? denormalize(t) : t; }

TrainerConfig tiny_trainer() {
  TrainerConfig c;
  c.generator.encoder_channels = {8, 16, 32};
  c.generator.residual_channels = 32;
  c.generator.residual_blocks = 1;
  c.generator.decoder_channels = {32, 16, 8};
  c.discriminator.channels = {8, 16, 32, 64, 1};
  c.iter_max = 100;
  c.iter_decay_start = 75;
  c.checkpoint_every = 0;
  c.progress_every = 0;
  c.seed = 17;
  return c;
}

// ---- criteria --------------------------------------------------------------

void criterion_adain() {
  const auto t0 = Clock::now();
  torch::manual_seed(101);
  std::mt19937 rng(101);
  double worst = 0, worst_identity = 0;
  for (int i = 0; i < 1000; ++i) {
    // Feature-like scales: spatial std in [1, 3] for content, [0.5, 3] for style.
    const int c = 1 + static_cast<int>(rng() % 16), h = 8 + static_cast<int>(rng() % 17),
              w = 8 + static_cast<int>(rng() % 17);
    std::uniform_real_distribution<double> cscale(1.0, 3.0), sscale(0.5, 3.0);
    const auto content = torch::randn({1, c, h, w}, torch::kFloat64) * cscale(rng) +
                         torch::randn({1, c, 1, 1}, torch::kFloat64) * 3;
    const auto style_img = torch::randn({1, c, h + 1, w + 2}, torch::kFloat64) * sscale(rng) +
                           torch::randn({1, c, 1, 1}, torch::kFloat64) * 3;
    const auto cs = channel_stats(content), ss = channel_stats(style_img);
    std::vector<double> mu_out, sig_out, mu_sty, sig_sty;
    stats_oracle(adain(content, cs, ss), mu_out, sig_out);
    stats_oracle(style_img, mu_sty, sig_sty);
    for (int k = 0; k < c; ++k) {
      worst = std::max({worst, std::abs(mu_out[k] - mu_sty[k]), std::abs(sig_out[k] - sig_sty[k])});
    }
    const auto same = adain(content, cs, cs);
    worst_identity = std::max(worst_identity, (same - content).abs().max().item<double>());
  }
  const double secs = seconds_since(t0);
  report(1, worst < 1e-4 && worst_identity < 1e-6 && secs < 10, "AdaIN output carries style statistics",
         fmt("max stat err %.3g (<1e-4), identity err %.3g (<1e-6), %.2f s (<10 s)", worst, worst_identity, secs));
}

void criterion_global_stats() {
  auto ds = DomainStats::zeros(3, 0.99);
  const std::vector<double> c{2.5, -1.25, 0.4};
  const ChannelStats cur{torch::tensor(c, torch::kFloat64), torch::tensor({1.0, 0.5, 3.0}, torch::kFloat64)};
  double worst = 0;
  for (int k = 1; k <= 10000; ++k) {
    update_global_inplace(ds, cur);
    const double f = 1.0 - std::pow(0.99, k);
    for (std::size_t j = 0; j < c.size(); ++j) worst = std::max(worst, std::abs(ds.mu_glob[j] - c[j] * f));
  }
  report(2, worst < 1e-9, "global statistics follow c(1-0.99^k)", fmt("max err %.3g over k<=10000 (<1e-9)", worst));
}

void criterion_schedules() {
  const ScheduleConfig lin;  // 1e-4, 100000, 75000
  double worst = 0;
  worst = std::max(worst, std::abs(lr_linear(lin, 75000) - 1e-4));
  worst = std::max(worst, std::abs(lr_linear(lin, 87500) - 5e-5));
  worst = std::max(worst, std::abs(lr_linear(lin, 100000) - 0.0));
  SegConfig seg;
  seg.iter_max = 90000;
  worst = std::max(worst, std::abs(poly_lr(seg, 0) - 1e-4));
  worst = std::max(worst, std::abs(poly_lr(seg, 45000) - 1e-4 * std::pow(0.5, 0.9)));
  worst = std::max(worst, std::abs(poly_lr(seg, 90000) - 0.0));
  report(3, worst < 1e-12, "learning-rate schedules", fmt("max err %.3g (<1e-12)", worst));
}

void criterion_shapes() {
  torch::NoGradGuard ng;
  torch::manual_seed(4);
  bool ok = true;
  std::ostringstream detail;
  auto gen = build_generator(GeneratorConfig{}, 4);
  for (auto hw : {std::pair{64, 64}, std::pair{32, 96}}) {
    const auto x = torch::rand({1, 4, hw.first, hw.second}) * 2 - 1;
    const auto y = gen->forward(x);
    const bool shape = y.sizes() == x.sizes();
    const bool bound = y.abs().max().item<float>() < 1.0f;
    ok = ok && shape && bound;
    detail << "G 4x" << hw.first << "x" << hw.second << (shape && bound ? " ok; " : " BAD; ");
  }
  auto disc = build_discriminator(DiscriminatorConfig{}, 4);
  disc->eval();
  for (auto [side, expect] : {std::pair{512, 16}, std::pair{64, 2}}) {
    const auto d = disc->forward(torch::rand({1, 4, side, side}) * 2 - 1);
    const bool shape = d.sizes() == std::vector<std::int64_t>{1, 1, expect, expect};
    const bool bound = d.min().item<float>() > 0.0f && d.max().item<float>() < 1.0f;
    ok = ok && shape && bound;
    detail << "D 4x" << side << "x" << side << " -> " << d.size(1) << "x" << d.size(2) << "x" << d.size(3)
           << (shape && bound ? " ok; " : " BAD; ");
  }
  report(4, ok, "generator closure and discriminator patch maps", detail.str());
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  const auto cfg = tiny_trainer();
  auto gen_a = build_generator(cfg.generator, 1), gen_b = build_generator(cfg.generator, 2);
  auto disc_a = build_discriminator(cfg.discriminator, 3), disc_b = build_discriminator(cfg.discriminator, 4);
  for (torch::nn::Module* m : {static_cast<torch::nn::Module*>(gen_a.get()), static_cast<torch::nn::Module*>(gen_b.get()),
                               static_cast<torch::nn::Module*>(disc_a.get()),
                               static_cast<torch::nn::Module*>(disc_b.get())}) {
    m->to(torch::kFloat64);
  }
  disc_a->eval();  // dropout off so the objective is a deterministic function
  disc_b->eval();
  set_requires_grad(*disc_a, false);
  set_requires_grad(*disc_b, false);
  torch::manual_seed(5);
  const auto src = torch::rand({1, 4, 32, 32}, torch::kFloat64) * 2 - 1;
  const auto tgt = torch::rand({1, 4, 32, 32}, torch::kFloat64) * 2 - 1;
  auto loss = [&] { return generator_objective(gen_a, gen_b, disc_a, disc_b, src, tgt, cfg.weights).total; };

  gen_a->zero_grad();
  gen_b->zero_grad();
  loss().backward();

  struct Slot {
    torch::Tensor data, grad;
    std::int64_t index;
  };
  std::vector<Slot> all;
  for (auto* g : {gen_a.get(), gen_b.get()}) {
    for (auto& p : g->parameters()) {
      auto flat = p.data().view({-1});
      auto grad = p.grad().view({-1});
      for (std::int64_t i = 0; i < flat.numel(); ++i) all.push_back({flat, grad, i});
    }
  }
  const std::size_t want = (all.size() + 99) / 100;
  std::mt19937_64 rng(6);
  std::shuffle(all.begin(), all.end(), rng);

  torch::NoGradGuard ng;
  const double h = 1e-6;
  const double f0 = loss().item<double>();
  std::size_t checked = 0, kinks = 0, bad = 0;
  double worst = 0;
  for (const auto& s : all) {
    if (checked == want) break;
    const double orig = s.data[s.index].item<double>();
    s.data[s.index] = orig + h;
    const double up = loss().item<double>();
    s.data[s.index] = orig - h;
    const double dn = loss().item<double>();
    s.data[s.index] = orig;
    // A jump between the one-sided slopes means the step straddles a ReLU,
    // |.| or max-pool switch, where no finite difference is meaningful.
    const double fwd = (up - f0) / h, bwd = (f0 - dn) / h;
    if (std::abs(fwd - bwd) > 1e-3 * std::max(std::abs(fwd), std::abs(bwd)) + 2e-6) {
      ++kinks;
      continue;
    }
    const double num = (up - dn) / (2 * h), ana = s.grad[s.index].item<double>();
    const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-4});
    worst = std::max(worst, rel);
    if (rel >= 1e-3) ++bad;
    ++checked;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << checked << "/" << all.size() << " generator params (1%), worst rel err " << fmt("%.3g", worst)
    << " (<1e-3), " << bad << " over tolerance, " << kinks << " kink samples redrawn, " << fmt("%.1f s (<120 s)", secs);
  report(5, bad == 0 && checked == want && secs < 120, "autograd matches central finite differences", d.str());
}

void criterion_loss_oracle(const fs::path& work) {
  SceneSpec s;
  s.seed = 31;
  s.noise_seed = 31;
  s.height = s.width = 32;
  s.style.noise_std = 4;
  SceneSpec t = s;
  t.noise_seed = 32;
  t.style.gain = {1.3, 1.3, 1.3, 1.3};
  t.style.bias = {60, 60, 60, 60};
  const Manifest m = generate_dataset(8, s, t, work / "loss_oracle");
  const auto sources = m.select(Domain::kSource), targets = m.select(Domain::kTarget);

  TrainState st(tiny_trainer());
  st.set_capture_trace(true);
  std::mt19937 rng(33);
  double worst = 0;
  for (int step = 0; step < 20; ++step) {
    const Tile src = normalize(load_entry(sources[rng() % sources.size()]));
    const Tile tgt = normalize(load_entry(targets[rng() % targets.size()]));
    const LossReport r = train_step(st, src, tgt);
    const StepTrace& tr = st.last_trace();
    const auto is = to_vec(tr.source), it = to_vec(tr.target);
    const double cross = mean_abs_diff(is, to_vec(tr.rec_source)) + mean_abs_diff(it, to_vec(tr.rec_target));
    const double self = mean_abs_diff(is, to_vec(tr.self_source)) + mean_abs_diff(it, to_vec(tr.self_target));
    const double grad = mean_abs_diff(sobel_oracle(is, 4, 32, 32), sobel_oracle(to_vec(tr.fake_b), 4, 32, 32)) +
                        mean_abs_diff(sobel_oracle(it, 4, 32, 32), sobel_oracle(to_vec(tr.fake_a), 4, 32, 32));
    worst = std::max({worst, std::abs(cross - r.terms.cross), std::abs(self - r.terms.self),
                      std::abs(grad - r.terms.grad)});
  }
  report(6, worst < 1e-6, "trainer loss terms equal straight-line re-implementation",
         fmt("20 steps, max abs diff %.3g (<1e-6)", worst));
}

struct PipelineRun {
  fs::path root;
  double da_seconds = 0, seg_seconds = 0;
  EvalResult baseline, adapted;
};

PipelineRun run_pipeline(const PipelineConfig& cfg, const fs::path& root) {
  fs::remove_all(root);
  PipelineRun run{root};
  const Workspace ws{root};
  std::cout << "pipeline " << root.string() << ": synth" << std::endl;
  cmd_synth(cfg, ws);
  auto t0 = Clock::now();
  std::cout << "pipeline " << root.string() << ": train-da (" << cfg.da.iter_max << " steps)" << std::endl;
  cmd_train_da(cfg, ws);
  run.da_seconds = seconds_since(t0);
  cmd_stylize(cfg, ws);
  t0 = Clock::now();
  std::cout << "pipeline " << root.string() << ": train-seg" << std::endl;
  cmd_train_seg(cfg, ws);
  cmd_evaluate(cfg, ws);
  run.seg_seconds = seconds_since(t0);
  const Manifest raw = read_manifest(ws.raw() / "manifest.csv");
  const Manifest target{raw.select(Domain::kTarget)};
  run.baseline = evaluate(SegModel::load(ws.seg_baseline()), target);
  run.adapted = evaluate(SegModel::load(ws.seg_adapted()), target);
  cmd_plot(ws);
  return run;
}

void criteria_desk(const PipelineRun& run, const PipelineConfig& cfg) {
  const Workspace ws{run.root};
  const Manifest raw = read_manifest(ws.raw() / "manifest.csv");
  const Manifest styled = read_manifest(ws.stylized() / "manifest.csv");
  std::vector<Tile> src, tgt, sty;
  for (const auto& e : raw.select(Domain::kSource)) src.push_back(as_u8(read_tile(e.tile_path)));
  for (const auto& e : raw.select(Domain::kTarget)) tgt.push_back(as_u8(read_tile(e.tile_path)));
  for (const auto& e : styled.entries) sty.push_back(read_tile(e.tile_path));

  // 7: histogram alignment
  {
    std::vector<Tile> sty_u8;
    for (const auto& t : sty) sty_u8.push_back(as_u8(t));
    const auto hs = histogram(src), ht = histogram(tgt), hy = histogram(sty_u8);
    bool ok = true;
    std::ostringstream d;
    for (std::size_t b = 0; b < 4; ++b) {
      const double base = wasserstein1(hs[b], ht[b]), after = wasserstein1(hy[b], ht[b]);
      ok = ok && after < 0.3 * base;
      d << "band" << b << " " << fmt("%.2f/%.2f=%.1f%%", after, base, 100 * after / base) << "; ";
    }
    const bool fast = run.da_seconds < 3 * 3600;
    d << fmt("DA %.0f s (<10800 s)", run.da_seconds);
    report(7, ok && fast, "stylized-source histograms approach the target (W1 < 30% of source-target)", d.str());
  }

  // 8: edges survive translation better than a sigma=2 blur
  {
    double r_sty = 0, r_blur = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const Tile s = as_float(src[i]);
      const auto es = edge_magnitude(s);
      r_sty += pearson(es, edge_magnitude(as_float(sty[i])));
      r_blur += pearson(es, edge_magnitude(gaussian_smooth(s, 2.0)));
    }
    r_sty /= static_cast<double>(src.size());
    r_blur /= static_cast<double>(src.size());
    report(8, r_sty > r_blur, "Sobel-magnitude correlation: stylized vs blurred",
           fmt("stylized %.4f > blurred(sigma=2) %.4f", r_sty, r_blur));
  }

  // 9: downstream gain
  {
    const double gain = 100 * (run.adapted.miou - run.baseline.miou);
    const bool fast = run.seg_seconds < 3600;
    report(9, gain >= 5.0 && fast, "adapted segmentation beats the source-only baseline by >= 5 mIoU points",
           fmt("baseline %.2f, adapted %.2f, gain %.2f points; seg %.0f s (<3600 s)", 100 * run.baseline.miou,
               100 * run.adapted.miou, gain, run.seg_seconds));
  }

  // Supplementary smoke oracle on the same run: L_self moving average.
  {
    std::ifstream in(ws.da() / "loss_log.csv");
    std::string line;
    std::getline(in, line);
    std::vector<double> self;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string f;
      for (int k = 0; k < 5 && std::getline(ss, f, ','); ++k) {
      }
      self.push_back(std::stod(f));
    }
    if (self.size() >= 200) {
      const double head = std::accumulate(self.begin(), self.begin() + 100, 0.0) / 100;
      const double tail = std::accumulate(self.end() - 100, self.end(), 0.0) / 100;
      std::printf("[info] L_self 100-step average: first %.4f, last %.4f (%.1f%% of first, target < 50%%)\n", head,
                  tail, 100 * tail / head);
    }
  }
  (void)cfg;
}

void criterion_determinism(const PipelineRun& a, const PipelineRun& b) {
  const auto la = lines_of(Workspace{a.root}.da() / "loss_log.csv", 51);
  const auto lb = lines_of(Workspace{b.root}.da() / "loss_log.csv", 51);
  const bool logs = la.size() == 51 && la == lb;
  const bool csv = slurp(Workspace{a.root}.results()) == slurp(Workspace{b.root}.results()) &&
                   !slurp(Workspace{a.root}.results()).empty();
  const bool full = slurp(Workspace{a.root}.da() / "loss_log.csv") == slurp(Workspace{b.root}.da() / "loss_log.csv");
  std::ostringstream d;
  d << "first 50 loss-log rows " << (logs ? "identical" : "DIFFER") << ", results.csv "
    << (csv ? "identical" : "DIFFERS") << " (full loss log " << (full ? "identical" : "differs") << ")";
  report(10, logs && csv, "two seeded desk runs are reproducible", d.str());
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_work";
  const fs::path config = argc > 2 ? fs::path(argv[2]) : fs::path(STYLEADAPT_SOURCE_DIR) / "configs" / "desk.json";
  fs::create_directories(work);
  torch::set_num_threads(1);

  auto guarded = [](int id, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, "exception", e.what());
    }
  };

  guarded(1, criterion_adain);
  guarded(2, criterion_global_stats);
  guarded(3, criterion_schedules);
  guarded(4, criterion_shapes);
  guarded(5, criterion_gradients);
  guarded(6, [&] { criterion_loss_oracle(work); });

  std::optional<PipelineConfig> cfg;
  std::optional<PipelineRun> first;
  try {
    cfg = load_pipeline_config(config);
    first = run_pipeline(*cfg, work / "run_a");
    criteria_desk(*first, *cfg);
  } catch (const std::exception& e) {
    for (int id = 7; id <= 9; ++id) report(id, false, "desk pipeline failed", e.what());
  }
  guarded(10, [&] {
    if (!first) throw Error("first desk run unavailable");
    criterion_determinism(*first, run_pipeline(*cfg, work / "run_b"));
  });

  std::printf("%s: %d criterion failure(s)\n", g_failures == 0 ? "ALL PASS" : "FAILURES", g_failures);
  return g_failures == 0 ? 0 : 1;
}
