#pragma once

#include <string>
#include <vector>

#include "timedit/diffusion.hpp"
#include "timedit/rng.hpp"
#include "timedit/tensor.hpp"

namespace timedit {

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_blocks = 4;
  int L_max = 96;
  int K_max = 8;
  int T = 100;
  bool mask_channel = true;  // append binary masks as extra input channels

  enum class Conditioning { adaln, additive, cross_attention, token_concat };
  enum class Attention { temporal, channel, dual, patch };
  Conditioning conditioning = Conditioning::adaln;
  Attention attention = Attention::temporal;
  int patch_len = 8;
  int patch_stride = 8;
  bool cond_pooled = false;  // pool the condition embedding to one vector

  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  static Conditioning conditioning_from_string(const std::string& s);
  static Attention attention_from_string(const std::string& s);
  const char* conditioning_name() const;
  const char* attention_name() const;
};

// Token embeddings for one batch element: target tokens carry the noised
// values plus diffusion-time information, condition tokens the clean
// observations; key_allowed marks tokens that may act as attention keys.
struct Embedded {
  Tensor target_tokens;
  Tensor cond_tokens;
  std::vector<std::uint8_t> target_key_allowed;
  std::vector<std::uint8_t> cond_key_allowed;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  std::vector<double> grad;
};

class DenoiserModel : public Denoiser {
 public:
  DenoiserModel() = default;
  DenoiserModel(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  Tensor predict_eps(const Tensor& x_full, int t, const ElementView& view) override;

  // Embedding stage exposed for tests and diagnostics.
  Embedded embed(const Tensor& x_full, int t, const ElementView& view);

  // One transformer block applied to tokens (pre-norm, AdaLN-modulated when
  // the config says so).
  Tensor block_forward(int block, const Tensor& tokens, const Tensor& cond_tokens,
                       const std::vector<std::uint8_t>& key_allowed,
                       const std::vector<std::uint8_t>& cond_key_allowed,
                       // groups for axial attention; empty means full attention
                       const std::vector<std::vector<int>>& time_groups = {},
                       const std::vector<std::vector<int>>& channel_groups = {}) const;

  std::vector<NamedParam>& parameters() { return params_; }
  const std::vector<NamedParam>& parameters() const { return params_; }
  Tensor param(const std::string& name) const;
  std::vector<real>& param_data(const std::string& name);
  std::size_t param_count() const;

  void zero_grad();
  // Adds this tape's parameter gradients into the stored buffers.
  void accumulate_grads(const GradTape& tape);

 private:
  Tensor add_param(const std::string& name, std::vector<int> shape, Rng& rng, double init_std);
  Tensor linear(const Tensor& x, const std::string& w, const std::string& b) const;
  Tensor mha(const std::string& prefix, const Tensor& q_in, const Tensor& kv_in,
             const std::vector<std::uint8_t>& key_allowed) const;
  Tensor adaln(int block, int site, const Tensor& h, const Tensor& cond) const;
  Tensor maybe_norm(int block, int site, const Tensor& h, const Tensor& cond) const;
  Tensor step_embedding(int t) const;
  Tensor pos_rows(int offset, int count) const;

  ModelConfig cfg_;
  std::vector<NamedParam> params_;
  std::vector<real> pos_table_;  // L_max x d sinusoidal, constant
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global norm; <= 0 disables
};

class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) {}
  // Applies one update from the accumulated gradients, then clears them.
  void step(std::vector<NamedParam>& params);
  void step(DenoiserModel& model) { step(model.parameters()); }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Adds this tape's gradients into the buffers of any matching parameters.
void accumulate_param_grads(std::vector<NamedParam>& params, const GradTape& tape);

inline constexpr const char* kCheckpointFormat = "timedit-ckpt-v1";

void save_checkpoint(const DenoiserModel& model, const std::string& path);
DenoiserModel load_checkpoint(const std::string& path);

}  // namespace timedit
