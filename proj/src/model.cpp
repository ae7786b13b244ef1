#include "timedit/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "timedit/config.hpp"

namespace timedit {

namespace {

constexpr double kLnEps = 1e-5;

std::vector<real> sinusoidal(double position, int d) {
  std::vector<real> v(d);
  int half = d / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    v[2 * i] = static_cast<real>(std::sin(position * freq));
    v[2 * i + 1] = static_cast<real>(std::cos(position * freq));
  }
  if (d % 2) v[d - 1] = real(0);
  return v;
}

bool any_set(const std::vector<std::uint8_t>& v) {
  for (auto x : v) {
    if (x) return true;
  }
  return false;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_blocks < 1 || L_max < 1 || K_max < 1 || T < 1) {
    throw std::invalid_argument("ModelConfig: dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
  }
  if (attention == Attention::patch) {
    if (patch_len < 1 || patch_stride < 1 || patch_len > L_max || patch_stride > patch_len) {
      throw std::invalid_argument("ModelConfig: bad patch geometry");
    }
    if ((L_max - patch_len) % patch_stride != 0) {
      throw std::invalid_argument("ModelConfig: (L_max - patch_len) must be divisible by patch_stride");
    }
  }
}

ModelConfig::Conditioning ModelConfig::conditioning_from_string(const std::string& s) {
  if (s == "adaln") return Conditioning::adaln;
  if (s == "additive") return Conditioning::additive;
  if (s == "cross_attention") return Conditioning::cross_attention;
  if (s == "token_concat") return Conditioning::token_concat;
  throw std::invalid_argument("unknown conditioning mode: " + s);
}

ModelConfig::Attention ModelConfig::attention_from_string(const std::string& s) {
  if (s == "temporal") return Attention::temporal;
  if (s == "channel") return Attention::channel;
  if (s == "dual") return Attention::dual;
  if (s == "patch") return Attention::patch;
  throw std::invalid_argument("unknown attention mode: " + s);
}

const char* ModelConfig::conditioning_name() const {
  switch (conditioning) {
    case Conditioning::adaln: return "adaln";
    case Conditioning::additive: return "additive";
    case Conditioning::cross_attention: return "cross_attention";
    default: return "token_concat";
  }
}

const char* ModelConfig::attention_name() const {
  switch (attention) {
    case Attention::temporal: return "temporal";
    case Attention::channel: return "channel";
    case Attention::dual: return "dual";
    default: return "patch";
  }
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

Tensor DenoiserModel::add_param(const std::string& name, std::vector<int> shape, Rng& rng,
                                double init_std) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<real> data(n, real(0));
  if (init_std > 0.0) {
    for (auto& x : data) {
      double z;
      do {
        z = rng.normal();
      } while (std::fabs(z) > 2.0);  // truncated at 2 sigma
      x = static_cast<real>(z * init_std);
    }
  }
  Tensor t(std::move(shape), std::move(data), true);
  params_.push_back({name, t, {}});
  return t;
}

DenoiserModel::DenoiserModel(const ModelConfig& config, Rng& rng) : cfg_(config) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const int s = cfg_.mask_channel ? 2 : 1;
  int in_dim = 0, out_dim = 0;
  switch (cfg_.attention) {
    case ModelConfig::Attention::temporal:
      in_dim = cfg_.K_max * s;
      out_dim = cfg_.K_max;
      break;
    case ModelConfig::Attention::channel:
      in_dim = cfg_.L_max * s;
      out_dim = cfg_.L_max;
      break;
    case ModelConfig::Attention::dual:
      in_dim = s;
      out_dim = 1;
      break;
    case ModelConfig::Attention::patch:
      in_dim = cfg_.patch_len * cfg_.K_max * s;
      out_dim = cfg_.patch_len * cfg_.K_max;
      break;
  }

  const double w_std = 0.02;
  add_param("in_tar.w", {in_dim, d}, rng, w_std);
  add_param("in_tar.b", {d}, rng, 0.0);
  add_param("in_con.w", {in_dim, d}, rng, w_std);
  add_param("in_con.b", {d}, rng, 0.0);
  add_param("t_mlp.w1", {d, d}, rng, w_std);
  add_param("t_mlp.b1", {d}, rng, 0.0);
  add_param("t_mlp.w2", {d, d}, rng, w_std);
  add_param("t_mlp.b2", {d}, rng, 0.0);
  if (cfg_.attention == ModelConfig::Attention::channel ||
      cfg_.attention == ModelConfig::Attention::dual) {
    add_param("ch_embed", {cfg_.K_max, d}, rng, w_std);
  }
  if (cfg_.conditioning == ModelConfig::Conditioning::token_concat) {
    add_param("seg", {2, d}, rng, w_std);
  }

  auto add_attn = [&](const std::string& prefix) {
    add_param(prefix + ".wq", {d, d}, rng, w_std);
    add_param(prefix + ".bq", {d}, rng, 0.0);
    add_param(prefix + ".wk", {d, d}, rng, w_std);
    add_param(prefix + ".bk", {d}, rng, 0.0);
    add_param(prefix + ".wv", {d, d}, rng, w_std);
    add_param(prefix + ".bv", {d}, rng, 0.0);
    add_param(prefix + ".wo", {d, d}, rng, w_std);
    add_param(prefix + ".bo", {d}, rng, 0.0);
  };
  auto add_mod = [&](const std::string& prefix) {
    add_param(prefix + ".scale_w", {d, d}, rng, 0.0);
    add_param(prefix + ".scale_b", {d}, rng, 0.0);
    add_param(prefix + ".shift_w", {d, d}, rng, 0.0);
    add_param(prefix + ".shift_b", {d}, rng, 0.0);
  };

  for (int i = 0; i < cfg_.n_blocks; ++i) {
    std::string p = "blocks." + std::to_string(i) + ".";
    add_attn(p + "attn");
    if (cfg_.attention == ModelConfig::Attention::dual) add_attn(p + "attn2");
    if (cfg_.conditioning == ModelConfig::Conditioning::cross_attention) add_attn(p + "cross");
    add_param(p + "ffn.w1", {d, 4 * d}, rng, w_std);
    add_param(p + "ffn.b1", {4 * d}, rng, 0.0);
    add_param(p + "ffn.w2", {4 * d, d}, rng, w_std);
    add_param(p + "ffn.b2", {d}, rng, 0.0);
    if (cfg_.conditioning == ModelConfig::Conditioning::adaln) {
      add_mod(p + "mod1");
      add_mod(p + "mod2");
      if (cfg_.attention == ModelConfig::Attention::dual) add_mod(p + "mod3");
    }
  }
  add_param("head.w", {d, out_dim}, rng, 0.0);
  add_param("head.b", {out_dim}, rng, 0.0);

  pos_table_.resize(static_cast<std::size_t>(cfg_.L_max) * d);
  for (int l = 0; l < cfg_.L_max; ++l) {
    std::vector<real> row = sinusoidal(l, d);
    std::copy(row.begin(), row.end(), pos_table_.begin() + static_cast<std::size_t>(l) * d);
  }
}

Tensor DenoiserModel::param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw std::invalid_argument("DenoiserModel: no parameter named '" + name + "'");
}

std::vector<real>& DenoiserModel::param_data(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor.mutable_data();
  }
  throw std::invalid_argument("DenoiserModel: no parameter named '" + name + "'");
}

std::size_t DenoiserModel::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void DenoiserModel::zero_grad() {
  for (auto& p : params_) p.grad.assign(p.tensor.size(), 0.0);
}

void DenoiserModel::accumulate_grads(const GradTape& tape) {
  accumulate_param_grads(params_, tape);
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

Tensor DenoiserModel::linear(const Tensor& x, const std::string& w, const std::string& b) const {
  return linear_bias(x, param(w), param(b));
}

Tensor DenoiserModel::pos_rows(int offset, int count) const {
  const int d = cfg_.d_model;
  std::vector<real> v(static_cast<std::size_t>(count) * d);
  std::copy(pos_table_.begin() + static_cast<std::size_t>(offset) * d,
            pos_table_.begin() + static_cast<std::size_t>(offset + count) * d, v.begin());
  return Tensor({count, d}, std::move(v), false);
}

Tensor DenoiserModel::step_embedding(int t) const {
  Tensor sin_t({1, cfg_.d_model}, sinusoidal(t, cfg_.d_model), false);
  Tensor h = gelu(linear(sin_t, "t_mlp.w1", "t_mlp.b1"));
  return linear(h, "t_mlp.w2", "t_mlp.b2");
}

namespace {

// Mean over the rows marked allowed; zero vector when none are.
Tensor pooled_rows(const Tensor& tokens, const std::vector<std::uint8_t>& allowed) {
  int n = tokens.rows();
  int count = 0;
  for (auto a : allowed) count += a != 0;
  std::vector<real> w(n, real(0));
  if (count > 0) {
    for (int i = 0; i < n; ++i) {
      if (allowed[i]) w[i] = static_cast<real>(1.0 / count);
    }
  }
  return matmul(Tensor({1, n}, std::move(w), false), tokens);
}

}  // namespace

Tensor DenoiserModel::adaln(int block, int site, const Tensor& h, const Tensor& cond) const {
  std::string p = "blocks." + std::to_string(block) + ".mod" + std::to_string(site);
  Tensor scale = linear(cond, p + ".scale_w", p + ".scale_b");
  Tensor shift = linear(cond, p + ".shift_w", p + ".shift_b");
  if (cond.rows() != h.rows()) {  // pooled conditioning: broadcast over rows
    Tensor ones({h.rows(), 1}, std::vector<real>(h.rows(), real(1)), false);
    scale = matmul(ones, scale);
    shift = matmul(ones, shift);
  }
  return affine_modulate(layer_norm(h, kLnEps), scale, shift);
}

Tensor DenoiserModel::maybe_norm(int block, int site, const Tensor& h, const Tensor& cond) const {
  if (cfg_.conditioning == ModelConfig::Conditioning::adaln) return adaln(block, site, h, cond);
  return layer_norm(h, kLnEps);
}

Tensor DenoiserModel::mha(const std::string& prefix, const Tensor& q_in, const Tensor& kv_in,
                          const std::vector<std::uint8_t>& key_allowed) const {
  Tensor q = linear(q_in, prefix + ".wq", prefix + ".bq");
  Tensor k = linear(kv_in, prefix + ".wk", prefix + ".bk");
  Tensor v = linear(kv_in, prefix + ".wv", prefix + ".bv");
  int dh = cfg_.d_model / cfg_.n_heads;
  std::vector<Tensor> heads;
  heads.reserve(cfg_.n_heads);
  for (int h = 0; h < cfg_.n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    heads.push_back(softmax_attention(qh, kh, vh, &key_allowed));
  }
  return linear(concat_cols(heads), prefix + ".wo", prefix + ".bo");
}

namespace {

std::vector<int> inverse_permutation(const std::vector<int>& p) {
  std::vector<int> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = static_cast<int>(i);
  return inv;
}

}  // namespace

// Axial attention: full attention within each row group.
Tensor mha_grouped_impl(const DenoiserModel& model, const std::string& prefix, const Tensor& h1,
                        const std::vector<std::vector<int>>& groups,
                        const std::vector<std::uint8_t>& key_allowed);

Tensor DenoiserModel::block_forward(int block, const Tensor& tokens, const Tensor& cond_tokens,
                                    const std::vector<std::uint8_t>& key_allowed,
                                    const std::vector<std::uint8_t>& cond_key_allowed,
                                    const std::vector<std::vector<int>>& time_groups,
                                    const std::vector<std::vector<int>>& channel_groups) const {
  std::string p = "blocks." + std::to_string(block) + ".";
  Tensor h = tokens;

  Tensor h1 = maybe_norm(block, 1, h, cond_tokens);
  Tensor attn = time_groups.empty() ? mha(p + "attn", h1, h1, key_allowed)
                                    : mha_grouped_impl(*this, p + "attn", h1, time_groups,
                                                       key_allowed);
  h = add(h, attn);

  if (cfg_.attention == ModelConfig::Attention::dual) {
    Tensor h3 = maybe_norm(block, 3, h, cond_tokens);
    Tensor attn2 = channel_groups.empty()
                       ? mha(p + "attn2", h3, h3, key_allowed)
                       : mha_grouped_impl(*this, p + "attn2", h3, channel_groups, key_allowed);
    h = add(h, attn2);
  }

  if (cfg_.conditioning == ModelConfig::Conditioning::cross_attention &&
      any_set(cond_key_allowed)) {
    Tensor h4 = layer_norm(h, kLnEps);
    h = add(h, mha(p + "cross", h4, cond_tokens, cond_key_allowed));
  }

  Tensor h2 = maybe_norm(block, 2, h, cond_tokens);
  Tensor f = linear(gelu(linear(h2, p + "ffn.w1", p + "ffn.b1")), p + "ffn.w2", p + "ffn.b2");
  return add(h, f);
}

Tensor mha_grouped_impl(const DenoiserModel& model, const std::string& prefix, const Tensor& h1,
                        const std::vector<std::vector<int>>& groups,
                        const std::vector<std::uint8_t>& key_allowed) {
  const ModelConfig& cfg = model.config();
  Tensor q = linear_bias(h1, model.param(prefix + ".wq"), model.param(prefix + ".bq"));
  Tensor k = linear_bias(h1, model.param(prefix + ".wk"), model.param(prefix + ".bk"));
  Tensor v = linear_bias(h1, model.param(prefix + ".wv"), model.param(prefix + ".bv"));
  int dh = cfg.d_model / cfg.n_heads;

  std::vector<Tensor> parts;
  std::vector<int> order;
  parts.reserve(groups.size());
  for (const auto& g : groups) {
    order.insert(order.end(), g.begin(), g.end());
    std::vector<std::uint8_t> allowed(g.size());
    bool any = false;
    for (std::size_t i = 0; i < g.size(); ++i) {
      allowed[i] = key_allowed[g[i]];
      any = any || allowed[i];
    }
    if (!any) {
      parts.push_back(Tensor::zeros({static_cast<int>(g.size()), cfg.d_model}));
      continue;
    }
    Tensor qg = gather_rows(q, g);
    Tensor kg = gather_rows(k, g);
    Tensor vg = gather_rows(v, g);
    std::vector<Tensor> heads;
    heads.reserve(cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
      Tensor qh = slice_cols(qg, h * dh, (h + 1) * dh);
      Tensor kh = slice_cols(kg, h * dh, (h + 1) * dh);
      Tensor vh = slice_cols(vg, h * dh, (h + 1) * dh);
      heads.push_back(softmax_attention(qh, kh, vh, &allowed));
    }
    parts.push_back(concat_cols(heads));
  }
  Tensor cat = concat_rows(parts);
  Tensor out = gather_rows(cat, inverse_permutation(order));
  return linear_bias(out, model.param(prefix + ".wo"), model.param(prefix + ".bo"));
}

// ---------------------------------------------------------------------------
// embedding
// ---------------------------------------------------------------------------

Embedded DenoiserModel::embed(const Tensor& x_full, int t, const ElementView& view) {
  const int L = view.L, K = view.K;
  const int d = cfg_.d_model;
  if (x_full.rows() != L || x_full.cols() != K) {
    throw std::invalid_argument("embed: x_full shape does not match view");
  }
  if (L > cfg_.L_max || K > cfg_.K_max) {
    throw std::invalid_argument("embed: shape exceeds L_max/K_max");
  }
  if (t < 0 || t > cfg_.T) throw std::invalid_argument("embed: t out of range");
  const int offset = cfg_.L_max - L;

  std::vector<real> tarm(static_cast<std::size_t>(L) * K), conm(tarm.size());
  for (std::size_t i = 0; i < tarm.size(); ++i) {
    tarm[i] = view.tar_mask[i] ? real(1) : real(0);
    conm[i] = view.con_mask[i] ? real(1) : real(0);
  }
  Tensor tar_mask_t({L, K}, std::move(tarm), false);
  Tensor con_mask_t({L, K}, std::move(conm), false);
  Tensor x_tar = mul(x_full, tar_mask_t);
  Tensor x_con = mul(x_full, con_mask_t);

  auto pad_c = [&](const Tensor& m) {
    if (K == cfg_.K_max) return m;
    return concat_cols({m, Tensor::zeros({L, cfg_.K_max - K})});
  };
  auto pad_r = [&](const Tensor& m) {
    if (offset == 0) return m;
    return concat_rows({Tensor::zeros({offset, cfg_.K_max}), m});
  };
  Tensor xt = pad_c(x_tar), xc = pad_c(x_con);
  Tensor tm = pad_c(tar_mask_t), cm = pad_c(con_mask_t);

  Tensor t_vec = step_embedding(t);  // 1 x d

  auto cell_usable = [&](int l, int k) {
    std::size_t i = static_cast<std::size_t>(l) * K + k;
    return view.tar_mask[i] || view.con_mask[i];
  };
  auto cell_con = [&](int l, int k) {
    return view.con_mask[static_cast<std::size_t>(l) * K + k] != 0;
  };

  Embedded e;
  switch (cfg_.attention) {
    case ModelConfig::Attention::temporal: {
      Tensor tin = cfg_.mask_channel ? concat_cols({xt, tm}) : xt;
      Tensor cin = cfg_.mask_channel ? concat_cols({xc, cm}) : xc;
      Tensor pos = pos_rows(offset, L);
      e.target_tokens = add_rowvec(add(linear(tin, "in_tar.w", "in_tar.b"), pos), t_vec);
      e.cond_tokens = add(linear(cin, "in_con.w", "in_con.b"), pos);
      e.target_key_allowed.assign(L, 0);
      e.cond_key_allowed.assign(L, 0);
      for (int l = 0; l < L; ++l) {
        for (int k = 0; k < K; ++k) {
          if (cell_usable(l, k)) e.target_key_allowed[l] = 1;
          if (cell_con(l, k)) e.cond_key_allowed[l] = 1;
        }
      }
      break;
    }
    case ModelConfig::Attention::channel: {
      Tensor xtT = transpose(pad_r(xt));
      Tensor xcT = transpose(pad_r(xc));
      Tensor tmT = transpose(pad_r(tm));
      Tensor cmT = transpose(pad_r(cm));
      Tensor tin = cfg_.mask_channel ? concat_cols({xtT, tmT}) : xtT;
      Tensor cin = cfg_.mask_channel ? concat_cols({xcT, cmT}) : xcT;
      Tensor ch = param("ch_embed");
      e.target_tokens = add_rowvec(add(linear(tin, "in_tar.w", "in_tar.b"), ch), t_vec);
      e.cond_tokens = add(linear(cin, "in_con.w", "in_con.b"), ch);
      e.target_key_allowed.assign(cfg_.K_max, 0);
      e.cond_key_allowed.assign(cfg_.K_max, 0);
      for (int k = 0; k < K; ++k) {
        for (int l = 0; l < L; ++l) {
          if (cell_usable(l, k)) e.target_key_allowed[k] = 1;
          if (cell_con(l, k)) e.cond_key_allowed[k] = 1;
        }
      }
      break;
    }
    case ModelConfig::Attention::dual: {
      int n = L * cfg_.K_max;
      Tensor vt = reshape(xt, {n, 1});
      Tensor vc = reshape(xc, {n, 1});
      Tensor mt = reshape(tm, {n, 1});
      Tensor mc = reshape(cm, {n, 1});
      Tensor tin = cfg_.mask_channel ? concat_cols({vt, mt}) : vt;
      Tensor cin = cfg_.mask_channel ? concat_cols({vc, mc}) : vc;
      // per-cell positional rows (constant) and channel embeddings (learned)
      std::vector<real> posv(static_cast<std::size_t>(n) * d);
      std::vector<int> ch_idx(n);
      for (int l = 0; l < L; ++l) {
        for (int k = 0; k < cfg_.K_max; ++k) {
          int cell = l * cfg_.K_max + k;
          std::copy(pos_table_.begin() + static_cast<std::size_t>(offset + l) * d,
                    pos_table_.begin() + static_cast<std::size_t>(offset + l + 1) * d,
                    posv.begin() + static_cast<std::size_t>(cell) * d);
          ch_idx[cell] = k;
        }
      }
      Tensor pos({n, d}, std::move(posv), false);
      Tensor ch = gather_rows(param("ch_embed"), ch_idx);
      e.target_tokens =
          add_rowvec(add(add(linear(tin, "in_tar.w", "in_tar.b"), pos), ch), t_vec);
      e.cond_tokens = add(add(linear(cin, "in_con.w", "in_con.b"), pos), ch);
      e.target_key_allowed.assign(n, 0);
      e.cond_key_allowed.assign(n, 0);
      for (int l = 0; l < L; ++l) {
        for (int k = 0; k < K; ++k) {
          int cell = l * cfg_.K_max + k;
          if (cell_usable(l, k)) e.target_key_allowed[cell] = 1;
          if (cell_con(l, k)) e.cond_key_allowed[cell] = 1;
        }
      }
      break;
    }
    case ModelConfig::Attention::patch: {
      int n_tok = (cfg_.L_max - cfg_.patch_len) / cfg_.patch_stride + 1;
      std::vector<int> rows;
      rows.reserve(static_cast<std::size_t>(n_tok) * cfg_.patch_len);
      for (int p = 0; p < n_tok; ++p) {
        for (int j = 0; j < cfg_.patch_len; ++j) rows.push_back(p * cfg_.patch_stride + j);
      }
      int flat = cfg_.patch_len * cfg_.K_max;
      auto patches = [&](const Tensor& frame) {
        return reshape(gather_rows(frame, rows), {n_tok, flat});
      };
      Tensor xtp = patches(pad_r(xt));
      Tensor xcp = patches(pad_r(xc));
      Tensor tmp = patches(pad_r(tm));
      Tensor cmp = patches(pad_r(cm));
      Tensor tin = cfg_.mask_channel ? concat_cols({xtp, tmp}) : xtp;
      Tensor cin = cfg_.mask_channel ? concat_cols({xcp, cmp}) : xcp;
      Tensor pos = pos_rows(0, n_tok);
      e.target_tokens = add_rowvec(add(linear(tin, "in_tar.w", "in_tar.b"), pos), t_vec);
      e.cond_tokens = add(linear(cin, "in_con.w", "in_con.b"), pos);
      e.target_key_allowed.assign(n_tok, 0);
      e.cond_key_allowed.assign(n_tok, 0);
      for (int p = 0; p < n_tok; ++p) {
        for (int j = 0; j < cfg_.patch_len; ++j) {
          int l = p * cfg_.patch_stride + j - offset;
          if (l < 0 || l >= L) continue;
          for (int k = 0; k < K; ++k) {
            if (cell_usable(l, k)) e.target_key_allowed[p] = 1;
            if (cell_con(l, k)) e.cond_key_allowed[p] = 1;
          }
        }
      }
      break;
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// full forward
// ---------------------------------------------------------------------------

Tensor DenoiserModel::predict_eps(const Tensor& x_full, int t, const ElementView& view) {
  const int L = view.L, K = view.K;
  const int offset = cfg_.L_max - L;
  Embedded e = embed(x_full, t, view);

  Tensor cond_for_blocks = e.cond_tokens;
  if (cfg_.conditioning == ModelConfig::Conditioning::adaln && cfg_.cond_pooled) {
    cond_for_blocks = pooled_rows(e.cond_tokens, e.cond_key_allowed);
  }

  Tensor h;
  std::vector<std::uint8_t> allowed;
  int n_t = e.target_tokens.rows();
  int n_c = 0;
  if (cfg_.conditioning == ModelConfig::Conditioning::token_concat) {
    Tensor seg = param("seg");
    Tensor cpart = add_rowvec(e.cond_tokens, gather_rows(seg, {0}));
    Tensor tpart = add_rowvec(e.target_tokens, gather_rows(seg, {1}));
    n_c = cpart.rows();
    h = concat_rows({cpart, tpart});
    allowed = e.cond_key_allowed;
    allowed.insert(allowed.end(), e.target_key_allowed.begin(), e.target_key_allowed.end());
  } else if (cfg_.conditioning == ModelConfig::Conditioning::additive) {
    h = add(e.target_tokens, e.cond_tokens);
    allowed = e.target_key_allowed;
  } else {
    h = e.target_tokens;
    allowed = e.target_key_allowed;
  }

  // axial groups for dual attention (over the possibly concatenated sequence)
  std::vector<std::vector<int>> time_groups, channel_groups;
  if (cfg_.attention == ModelConfig::Attention::dual) {
    int copies = cfg_.conditioning == ModelConfig::Conditioning::token_concat ? 2 : 1;
    time_groups.resize(cfg_.K_max);
    for (int k = 0; k < cfg_.K_max; ++k) {
      for (int c = 0; c < copies; ++c) {
        for (int l = 0; l < L; ++l) time_groups[k].push_back(c * n_t + l * cfg_.K_max + k);
      }
    }
    channel_groups.resize(L);
    for (int l = 0; l < L; ++l) {
      for (int c = 0; c < copies; ++c) {
        for (int k = 0; k < cfg_.K_max; ++k) channel_groups[l].push_back(c * n_t + l * cfg_.K_max + k);
      }
    }
  }

  for (int i = 0; i < cfg_.n_blocks; ++i) {
    h = block_forward(i, h, cond_for_blocks, allowed, e.cond_key_allowed, time_groups,
                      channel_groups);
  }
  if (cfg_.conditioning == ModelConfig::Conditioning::token_concat) {
    std::vector<int> tail(n_t);
    for (int i = 0; i < n_t; ++i) tail[i] = n_c + i;
    h = gather_rows(h, tail);
  }

  Tensor out = linear(layer_norm(h, kLnEps), "head.w", "head.b");

  switch (cfg_.attention) {
    case ModelConfig::Attention::temporal:
      break;  // out is L x K_max
    case ModelConfig::Attention::channel: {
      Tensor full = transpose(out);  // L_max x K_max
      std::vector<int> rows(L);
      for (int l = 0; l < L; ++l) rows[l] = offset + l;
      out = gather_rows(full, rows);
      break;
    }
    case ModelConfig::Attention::dual:
      out = reshape(out, {L, cfg_.K_max});
      break;
    case ModelConfig::Attention::patch: {
      int n_tok = out.rows();
      int flat = cfg_.patch_len * cfg_.K_max;
      // constant overlap-average scatter: token-cell -> frame cell
      std::vector<int> cover(cfg_.L_max, 0);
      for (int p = 0; p < n_tok; ++p) {
        for (int j = 0; j < cfg_.patch_len; ++j) ++cover[p * cfg_.patch_stride + j];
      }
      std::vector<real> sv(static_cast<std::size_t>(n_tok) * flat * cfg_.L_max * cfg_.K_max,
                           real(0));
      int frame_cells = cfg_.L_max * cfg_.K_max;
      for (int p = 0; p < n_tok; ++p) {
        for (int j = 0; j < cfg_.patch_len; ++j) {
          int l = p * cfg_.patch_stride + j;
          for (int k = 0; k < cfg_.K_max; ++k) {
            std::size_t src = (static_cast<std::size_t>(p) * cfg_.patch_len + j) * cfg_.K_max + k;
            std::size_t dst = static_cast<std::size_t>(l) * cfg_.K_max + k;
            sv[src * frame_cells + dst] = static_cast<real>(1.0 / cover[l]);
          }
        }
      }
      Tensor scatter({n_tok * flat, frame_cells}, std::move(sv), false);
      Tensor frame = reshape(matmul(reshape(out, {1, n_tok * flat}), scatter),
                             {cfg_.L_max, cfg_.K_max});
      std::vector<int> rows(L);
      for (int l = 0; l < L; ++l) rows[l] = offset + l;
      out = gather_rows(frame, rows);
      break;
    }
  }
  if (K < cfg_.K_max) out = slice_cols(out, 0, K);
  return out;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void accumulate_param_grads(std::vector<NamedParam>& params, const GradTape& tape) {
  for (auto& p : params) {
    if (const auto* g = tape.find_grad(p.tensor)) {
      if (p.grad.size() != p.tensor.size()) p.grad.assign(p.tensor.size(), 0.0);
      for (std::size_t i = 0; i < g->size(); ++i) p.grad[i] += (*g)[i];
    }
  }
}

void Adam::step(std::vector<NamedParam>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].tensor.size(), 0.0);
      v_[i].assign(params[i].tensor.size(), 0.0);
    }
  }
  double norm_sq = 0.0;
  for (auto& p : params) {
    if (p.grad.empty()) p.grad.assign(p.tensor.size(), 0.0);
    for (double g : p.grad) norm_sq += g * g;
  }
  double scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double norm = std::sqrt(norm_sq);
    if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
  }
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& data = params[i].tensor.mutable_data();
    auto& grad = params[i].grad;
    for (std::size_t j = 0; j < data.size(); ++j) {
      double g = grad[j] * scale;
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      data[j] = static_cast<real>(static_cast<double>(data[j]) -
                                  cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
    grad.assign(data.size(), 0.0);
  }
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t read_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const DenoiserModel& model, const std::string& path) {
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["dtype"] = kRealName;
  manifest["config"] = model_config_to_json(model.config());
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    plist.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  manifest["params"] = plist;
  std::string m = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("save_checkpoint: cannot open '" + path + "'");
  out.write("TDCK", 4);
  write_u32(out, static_cast<std::uint32_t>(m.size()));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& p : model.parameters()) {
    for (real x : p.tensor.data()) {
      static_assert(sizeof(real) == 4 || sizeof(real) == 8);
      if constexpr (sizeof(real) == 4) {
        std::uint32_t bits;
        std::memcpy(&bits, &x, 4);
        write_u32(out, bits);
      } else {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        write_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffULL));
        write_u32(out, static_cast<std::uint32_t>(bits >> 32));
      }
    }
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

DenoiserModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("load_checkpoint: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "TDCK") {
    throw std::runtime_error("load_checkpoint: not a checkpoint file");
  }
  std::uint32_t mlen = read_u32(in);
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), mlen);
  if (!in) throw std::runtime_error("load_checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mstr);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("load_checkpoint: corrupted manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("load_checkpoint: unsupported format version '" +
                             manifest.value("format", std::string("<missing>")) + "'");
  }
  if (manifest.value("dtype", "") != kRealName) {
    throw std::runtime_error("load_checkpoint: dtype mismatch (file " +
                             manifest.value("dtype", std::string("?")) + ", build " + kRealName +
                             ")");
  }
  if (!manifest.contains("config") || !manifest.contains("params")) {
    throw std::runtime_error("load_checkpoint: corrupted manifest (missing config or params)");
  }
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(manifest.at("config"));
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("load_checkpoint: corrupted manifest config: ") +
                             e.what());
  }
  Rng dummy(0);
  DenoiserModel model(cfg, dummy);
  const auto& plist = manifest.at("params");
  auto& params = model.parameters();
  if (plist.size() != params.size()) {
    throw std::runtime_error("load_checkpoint: parameter list does not match config");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::string name = plist[i].at("name").get<std::string>();
    std::vector<int> shape = plist[i].at("shape").get<std::vector<int>>();
    if (name != params[i].name || shape != params[i].tensor.shape()) {
      throw std::runtime_error("load_checkpoint: parameter '" + name +
                               "' does not match the model built from the stored config");
    }
    auto& data = params[i].tensor.mutable_data();
    for (auto& x : data) {
      if constexpr (sizeof(real) == 4) {
        std::uint32_t bits = read_u32(in);
        std::memcpy(&x, &bits, 4);
      } else {
        std::uint64_t lo = read_u32(in);
        std::uint64_t hi = read_u32(in);
        std::uint64_t bits = lo | (hi << 32);
        std::memcpy(&x, &bits, 8);
      }
    }
  }
  return model;
}

}  // namespace timedit
