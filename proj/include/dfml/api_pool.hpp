#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dfml/mat.hpp"
#include "dfml/nn.hpp"
#include "dfml/sources.hpp"

namespace dfml {

struct ScenarioConfig {
  enum class Kind { SS, SH, MH };
  Kind scenario = Kind::SS;
  int num_apis = 100;
  int ways = 5;
  std::vector<std::string> source_ids;  // resolved against the SourceSet
  std::vector<std::string> arch_menu;
  bool whitebox = false;

  static Kind kind_from_name(const std::string& s);
  static std::string kind_name(Kind k);
};

struct PretrainConfig {
  int train_per_class = 120;
  int heldout_total = 200;  // held-out samples per API for reported accuracy
  int epochs = 30;
  int batch = 32;
  double lr = 0.01;
  double accuracy_floor = 0.6;  // below this the handle is flagged, not dropped
};

// Identity and metadata of one API. The wrapped model stays private to the
// pool; the only inference surfaces are ApiPool::infer / infer_whitebox.
struct ApiHandle {
  int api_id = -1;
  std::vector<int> label_space;  // global class ids, size = ways
  std::string arch_tag;
  std::string source_id;
  double reported_accuracy = 0.0;
  bool quality_flagged = false;
};

struct WhiteboxInfer {
  MatD probs;
  // cotangents on the probabilities -> gradients on the inputs; free of queries
  std::function<MatD(const MatD&)> input_grads;
};

class ApiPool {
 public:
  ApiPool() = default;
  ApiPool(ApiPool&&) = default;
  ApiPool& operator=(ApiPool&&) = default;
  ApiPool(const ApiPool&) = delete;
  ApiPool& operator=(const ApiPool&) = delete;

  static ApiPool build(const ScenarioConfig& cfg, const SourceSet& sources,
                       const PretrainConfig& pre, std::uint64_t seed);

  // Test/diagnostic pool whose APIs return fixed probability vectors.
  static ApiPool stub_pool(const std::vector<std::vector<double>>& probs_per_api,
                           const std::vector<std::vector<int>>& label_spaces,
                           std::vector<int> input_shape, bool whitebox);

  int size() const { return int(apis_.size()); }
  const ApiHandle& handle(int api_id) const;
  std::vector<ApiHandle> handles() const;
  const std::vector<int>& input_shape() const { return input_shape_; }
  int input_dim() const { return shape_numel(input_shape_); }
  bool whitebox_enabled() const { return whitebox_; }

  // Probability vectors for a batch; increments the query ledger by the
  // batch size. Safe for concurrent callers.
  MatD infer(int api_id, const MatD& inputs) const;

  // As infer, plus exact input-gradient access. Requires whitebox mode.
  WhiteboxInfer infer_whitebox(int api_id, const MatD& inputs) const;

  long query_count(int api_id) const;
  long total_queries() const;

  void save(const std::string& dir) const;
  static ApiPool load(const std::string& dir);

 private:
  struct ApiState {
    ApiHandle handle;
    enum class Kind { net, constant } kind = Kind::net;
    nn::ArchSpec arch;
    std::vector<double> params;
    std::vector<double> buffers;
    std::vector<double> const_probs;
    std::unique_ptr<std::atomic<long>> queries;
  };

  const ApiState& state(int api_id) const;
  MatD forward_probs(const ApiState& s, const MatD& inputs,
                     nn::ModelTape<double>* tape) const;

  std::vector<ApiState> apis_;
  std::vector<int> input_shape_;
  bool whitebox_ = false;
};

}  // namespace dfml
