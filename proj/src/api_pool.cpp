#include "dfml/api_pool.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "dfml/errors.hpp"
#include "dfml/serialize.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dfml {

ScenarioConfig::Kind ScenarioConfig::kind_from_name(const std::string& s) {
  if (s == "SS") return Kind::SS;
  if (s == "SH") return Kind::SH;
  if (s == "MH") return Kind::MH;
  throw ConfigError("unknown scenario '" + s + "' (expected SS, SH or MH)");
}

std::string ScenarioConfig::kind_name(Kind k) {
  switch (k) {
    case Kind::SS: return "SS";
    case Kind::SH: return "SH";
    case Kind::MH: return "MH";
  }
  return "?";
}

namespace {

void validate_scenario(const ScenarioConfig& cfg) {
  if (cfg.num_apis < 1) throw ConfigError("num_apis must be positive");
  if (cfg.ways < 1) throw ConfigError("ways must be positive");
  const std::size_t ns = cfg.source_ids.size(), na = cfg.arch_menu.size();
  if (ns == 0 || na == 0) throw ConfigError("scenario needs at least one source and one arch");
  switch (cfg.scenario) {
    case ScenarioConfig::Kind::SS:
      if (ns != 1 || na != 1) throw ConfigError("SS requires exactly one source and one arch");
      break;
    case ScenarioConfig::Kind::SH:
      if (ns != 1 || na < 2) throw ConfigError("SH requires one source and several archs");
      break;
    case ScenarioConfig::Kind::MH:
      if (ns < 2 || na < 2) throw ConfigError("MH requires several sources and several archs");
      break;
  }
}

double heldout_accuracy(const nn::ArchSpec& arch, const std::vector<double>& params,
                        const std::vector<double>& buffers, const MatD& X,
                        const std::vector<int>& y) {
  Mat<double> logits = nn::model_logits<double>(arch, params.data(), buffers.data(), X,
                                                /*train_mode=*/false, nullptr);
  int hit = 0;
  for (int i = 0; i < logits.rows; ++i) {
    const double* r = logits.row(i);
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (r[j] > r[best]) best = j;
    if (best == y[i]) ++hit;
  }
  return logits.rows ? double(hit) / logits.rows : 0.0;
}

}  // namespace

ApiPool ApiPool::build(const ScenarioConfig& cfg, const SourceSet& sources,
                       const PretrainConfig& pre, std::uint64_t seed) {
  validate_scenario(cfg);
  std::vector<const Source*> srcs;
  for (const auto& id : cfg.source_ids) {
    const Source* s = sources.by_id(id);
    if (!s) throw ConfigError("scenario references unknown source '" + id + "'");
    srcs.push_back(s);
  }
  const std::vector<int> shape = srcs[0]->input_shape();
  for (const Source* s : srcs)
    if (s->input_shape() != shape)
      throw ConfigError("all sources in one pool must share an input shape");
  for (const Source* s : srcs)
    if (int(s->class_ids(Split::meta_train).size()) < cfg.ways)
      throw ConfigError("source '" + s->id() + "' has fewer meta-train classes than ways");

  ApiPool pool;
  pool.input_shape_ = shape;
  pool.whitebox_ = cfg.whitebox;

  for (int i = 0; i < cfg.num_apis; ++i) {
    const Source* src = srcs[i % srcs.size()];
    const std::string arch_tag = cfg.arch_menu[(i / srcs.size()) % cfg.arch_menu.size()];
    Rng rng(derive_seed(seed, {0xA91, std::uint64_t(i)}));

    const auto train_classes = src->class_ids(Split::meta_train);
    auto pick = rng.sample_without_replacement(int(train_classes.size()), cfg.ways);
    ApiState st;
    st.handle.api_id = i;
    st.handle.arch_tag = arch_tag;
    st.handle.source_id = src->id();
    for (int p : pick) st.handle.label_space.push_back(train_classes[p]);

    st.arch = nn::ArchSpec::parse(arch_tag, shape, cfg.ways);
    nn::init_params(st.arch, st.params, rng);
    nn::init_buffers(st.arch, st.buffers);

    // gather training and held-out data
    MatD train_X, held_X;
    std::vector<int> train_y, held_y;
    const int held_per_class = std::max(1, pre.heldout_total / cfg.ways);
    for (int c = 0; c < cfg.ways; ++c) {
      src->sample(st.handle.label_space[c], pre.train_per_class, rng, train_X);
      train_y.insert(train_y.end(), pre.train_per_class, c);
      src->sample(st.handle.label_space[c], held_per_class, rng, held_X);
      held_y.insert(held_y.end(), held_per_class, c);
    }

    // standard supervised pre-training
    nn::Adam opt(st.arch.param_count());
    std::vector<int> order(train_X.rows);
    for (int j = 0; j < train_X.rows; ++j) order[j] = j;
    std::vector<double> grad(st.arch.param_count());
    for (int epoch = 0; epoch < pre.epochs; ++epoch) {
      rng.shuffle(order);
      for (int start = 0; start < train_X.rows; start += pre.batch) {
        const int bs = std::min(pre.batch, train_X.rows - start);
        MatD bx(bs, train_X.cols);
        std::vector<int> by(bs);
        for (int j = 0; j < bs; ++j) {
          std::copy(train_X.row(order[start + j]), train_X.row(order[start + j]) + train_X.cols,
                    bx.row(j));
          by[j] = train_y[order[start + j]];
        }
        nn::ModelTape<double> tape;
        Mat<double> logits = nn::model_logits<double>(st.arch, st.params.data(),
                                                      st.buffers.data(), bx, true, &tape,
                                                      st.buffers.data());
        Mat<double> dlogits;
        nn::ce_hard<double>(logits, by, &dlogits, nn::Reduction::mean);
        std::fill(grad.begin(), grad.end(), 0.0);
        nn::model_backward<double>(st.arch, st.params.data(), st.buffers.data(), tape, dlogits,
                                   grad.data(), nullptr);
        opt.step(st.params.data(), grad.data(), int(grad.size()), pre.lr);
      }
    }

    st.handle.reported_accuracy = heldout_accuracy(st.arch, st.params, st.buffers, held_X, held_y);
    st.handle.quality_flagged = st.handle.reported_accuracy < pre.accuracy_floor;
    st.queries = std::make_unique<std::atomic<long>>(0);
    pool.apis_.push_back(std::move(st));
  }
  return pool;
}

ApiPool ApiPool::stub_pool(const std::vector<std::vector<double>>& probs_per_api,
                           const std::vector<std::vector<int>>& label_spaces,
                           std::vector<int> input_shape, bool whitebox) {
  if (probs_per_api.size() != label_spaces.size())
    throw InputError("stub pool needs one label space per probability vector");
  ApiPool pool;
  pool.input_shape_ = std::move(input_shape);
  pool.whitebox_ = whitebox;
  for (std::size_t i = 0; i < probs_per_api.size(); ++i) {
    ApiState st;
    st.kind = ApiState::Kind::constant;
    st.handle.api_id = int(i);
    st.handle.arch_tag = "constant";
    st.handle.label_space = label_spaces[i];
    st.handle.reported_accuracy = 1.0;
    st.const_probs = probs_per_api[i];
    st.queries = std::make_unique<std::atomic<long>>(0);
    pool.apis_.push_back(std::move(st));
  }
  return pool;
}

const ApiPool::ApiState& ApiPool::state(int api_id) const {
  if (api_id < 0 || api_id >= int(apis_.size()))
    throw InputError("api id " + std::to_string(api_id) + " out of range");
  return apis_[api_id];
}

const ApiHandle& ApiPool::handle(int api_id) const { return state(api_id).handle; }

std::vector<ApiHandle> ApiPool::handles() const {
  std::vector<ApiHandle> out;
  for (const auto& a : apis_) out.push_back(a.handle);
  return out;
}

MatD ApiPool::forward_probs(const ApiState& s, const MatD& inputs,
                            nn::ModelTape<double>* tape) const {
  if (inputs.cols != input_dim()) throw InputError("input width does not match the pool shape");
  if (s.kind == ApiState::Kind::constant) {
    MatD probs(inputs.rows, int(s.const_probs.size()));
    for (int i = 0; i < inputs.rows; ++i)
      std::copy(s.const_probs.begin(), s.const_probs.end(), probs.row(i));
    return probs;
  }
  // inference runs with frozen normalization statistics
  Mat<double> logits = nn::model_logits<double>(s.arch, s.params.data(), s.buffers.data(), inputs,
                                                /*train_mode=*/false, tape);
  return nn::softmax_rows(logits);
}

MatD ApiPool::infer(int api_id, const MatD& inputs) const {
  const ApiState& s = state(api_id);
  MatD probs = forward_probs(s, inputs, nullptr);
  s.queries->fetch_add(inputs.rows, std::memory_order_relaxed);
  return probs;
}

WhiteboxInfer ApiPool::infer_whitebox(int api_id, const MatD& inputs) const {
  if (!whitebox_)
    throw PermissionError("pool was not built with whitebox mode; only infer() is available");
  const ApiState& s = state(api_id);
  WhiteboxInfer out;
  if (s.kind == ApiState::Kind::constant) {
    out.probs = forward_probs(s, inputs, nullptr);
    const int rows = inputs.rows, cols = inputs.cols;
    out.input_grads = [rows, cols](const MatD&) { return MatD(rows, cols); };
  } else {
    auto tape = std::make_shared<nn::ModelTape<double>>();
    out.probs = forward_probs(s, inputs, tape.get());
    MatD probs = out.probs;
    const ApiState* sp = &s;
    out.input_grads = [sp, tape, probs](const MatD& dprobs) {
      if (dprobs.rows != probs.rows || dprobs.cols != probs.cols)
        throw InputError("cotangent shape mismatch");
      // softmax pullback: dlogit_j = p_j (dp_j - sum_k dp_k p_k)
      Mat<double> dlogits(probs.rows, probs.cols);
      for (int i = 0; i < probs.rows; ++i) {
        const double* p = probs.row(i);
        const double* g = dprobs.row(i);
        double dot = 0;
        for (int j = 0; j < probs.cols; ++j) dot += g[j] * p[j];
        double* d = dlogits.row(i);
        for (int j = 0; j < probs.cols; ++j) d[j] = p[j] * (g[j] - dot);
      }
      std::vector<double> scratch(sp->arch.param_count(), 0.0);
      Mat<double> dinput;
      nn::model_backward<double>(sp->arch, sp->params.data(), sp->buffers.data(), *tape, dlogits,
                                 scratch.data(), &dinput);
      return dinput;
    };
  }
  s.queries->fetch_add(inputs.rows, std::memory_order_relaxed);
  return out;
}

long ApiPool::query_count(int api_id) const {
  return state(api_id).queries->load(std::memory_order_relaxed);
}

long ApiPool::total_queries() const {
  long t = 0;
  for (const auto& a : apis_) t += a.queries->load(std::memory_order_relaxed);
  return t;
}

void ApiPool::save(const std::string& dir) const {
  fs::create_directories(fs::path(dir) / "checkpoints");
  json manifest = json::array();
  for (const auto& a : apis_) {
    const std::string ckpt = "checkpoints/api_" + std::to_string(a.handle.api_id) + ".bin";
    manifest.push_back({{"api_id", a.handle.api_id},
                        {"arch_tag", a.handle.arch_tag},
                        {"source_id", a.handle.source_id},
                        {"label_space", a.handle.label_space},
                        {"reported_accuracy", a.handle.reported_accuracy},
                        {"quality_flagged", a.handle.quality_flagged},
                        {"checkpoint", ckpt}});
    BinWriter w((fs::path(dir) / ckpt).string());
    w.str(a.kind == ApiState::Kind::constant ? "constant" : a.handle.arch_tag);
    w.vec_i32(input_shape_);
    w.i32(int(a.handle.label_space.size()));
    if (a.kind == ApiState::Kind::constant) {
      w.vec_f64(a.const_probs);
    } else {
      w.vec_f64(a.params);
      w.vec_f64(a.buffers);
    }
  }
  json root = {{"whitebox", whitebox_}, {"input_shape", input_shape_}, {"apis", manifest}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest under '" + dir + "'");
  out << root.dump(2) << "\n";
}

ApiPool ApiPool::load(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("cannot read manifest under '" + dir + "'");
  json root = json::parse(in);
  ApiPool pool;
  pool.whitebox_ = root.at("whitebox").get<bool>();
  pool.input_shape_ = root.at("input_shape").get<std::vector<int>>();
  for (const auto& rec : root.at("apis")) {
    ApiState st;
    st.handle.api_id = rec.at("api_id").get<int>();
    st.handle.arch_tag = rec.at("arch_tag").get<std::string>();
    st.handle.source_id = rec.value("source_id", std::string());
    st.handle.label_space = rec.at("label_space").get<std::vector<int>>();
    st.handle.reported_accuracy = rec.at("reported_accuracy").get<double>();
    st.handle.quality_flagged = rec.at("quality_flagged").get<bool>();
    BinReader r((fs::path(dir) / rec.at("checkpoint").get<std::string>()).string());
    const std::string tag = r.str();
    const auto shape = r.vec_i32();
    const int ways = r.i32();
    if (tag == "constant") {
      st.kind = ApiState::Kind::constant;
      st.const_probs = r.vec_f64();
    } else {
      st.arch = nn::ArchSpec::parse(tag, shape, ways);
      st.params = r.vec_f64();
      st.buffers = r.vec_f64();
    }
    st.queries = std::make_unique<std::atomic<long>>(0);
    pool.apis_.push_back(std::move(st));
  }
  return pool;
}

}  // namespace dfml
