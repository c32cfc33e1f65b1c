#include "latentlab/forward.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace latentlab {

namespace {

// y_i = g_i * x_i / sqrt(mean(x^2) + eps), row-wise.
Matrix rms_norm(const Matrix& x, const Vector& gain, double eps, Vector* inv_rms_out) {
  Matrix y(x.rows(), x.cols());
  Vector inv_rms(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double ms = x.row(i).squaredNorm() / static_cast<double>(x.cols());
    const double inv = 1.0 / std::sqrt(ms + eps);
    inv_rms(i) = inv;
    y.row(i) = (x.row(i) * inv).cwiseProduct(gain.transpose());
  }
  if (inv_rms_out) *inv_rms_out = inv_rms;
  return y;
}

Matrix project(const Matrix& x, const Matrix& w, const std::optional<LowRankDelta>& delta) {
  Matrix out = x * w;
  if (delta) {
    out.noalias() += delta->scale * ((x * delta->a->transpose()) * delta->b->transpose());
  }
  return out;
}

void apply_patches_at_layer(Matrix& h, const HookPlan& plan, int layer) {
  for (const auto& patch : plan.patches) {
    if (patch.layer == layer) h.row(patch.position) = patch.replacement.transpose();
  }
}

void capture_at_layer(const Matrix& h, const HookPlan& plan, int layer, ForwardTrace& trace) {
  for (const auto& [cap_layer, pos] : plan.captures) {
    if (cap_layer == layer) trace.captured[{cap_layer, pos}] = h.row(pos).transpose();
  }
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_derivative(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  return cdf + x * phi;
}

void HookPlan::validate(int n_layers, int seq_len) const {
  std::set<std::pair<int, int>> patched;
  for (const auto& patch : patches) {
    check(patch.layer >= 0 && patch.layer <= n_layers,
          "patch layer " + std::to_string(patch.layer) + " out of range");
    check(patch.position >= 0 && patch.position < seq_len,
          "patch position " + std::to_string(patch.position) + " out of range");
    check(patched.insert({patch.layer, patch.position}).second,
          "duplicate patch at (" + std::to_string(patch.layer) + ", " +
              std::to_string(patch.position) + ")");
  }
  for (const auto& [layer, pos] : captures) {
    check(layer >= 0 && layer <= n_layers,
          "capture layer " + std::to_string(layer) + " out of range");
    check(pos >= 0 && pos < seq_len,
          "capture position " + std::to_string(pos) + " out of range");
  }
}

const Vector& ForwardTrace::captured_at(int layer, int position) const {
  auto it = captured.find({layer, position});
  check(it != captured.end(), "no capture recorded at (" + std::to_string(layer) + ", " +
                                  std::to_string(position) + ")");
  return it->second;
}

ForwardTrace forward(const TransformerModel& model, const std::vector<TokenId>& token_ids,
                     const HookPlan& plan) {
  return forward(model, token_ids, plan, nullptr, nullptr);
}

ForwardTrace forward(const TransformerModel& model, const std::vector<TokenId>& token_ids,
                     const HookPlan& plan, const AdapterView* adapter,
                     ForwardActivations* record) {
  const auto& cfg = model.config;
  const int seq_len = static_cast<int>(token_ids.size());
  check(seq_len >= 1, "empty token sequence");
  check(seq_len <= cfg.max_seq_len, "sequence exceeds max_seq_len");
  plan.validate(cfg.n_layers, seq_len);
  check(record == nullptr || plan.empty(), "recorded forward does not support hooks");
  for (const auto& patch : plan.patches) {
    check(patch.replacement.size() == cfg.d_model, "patch replacement length != d_model");
    for (Eigen::Index i = 0; i < patch.replacement.size(); ++i)
      check(std::isfinite(patch.replacement(i)), "non-finite patch replacement");
  }
  if (adapter) {
    check(static_cast<int>(adapter->query.size()) == cfg.n_layers &&
              static_cast<int>(adapter->value.size()) == cfg.n_layers,
          "adapter view layer count mismatch");
  }

  ForwardTrace trace;
  const int dh = cfg.head_dim();

  Matrix h(seq_len, cfg.d_model);
  for (int i = 0; i < seq_len; ++i) {
    const TokenId id = token_ids[static_cast<std::size_t>(i)];
    check(id >= 0 && id < cfg.vocab_size, "token id " + std::to_string(id) + " out of range");
    h.row(i) = model.embedding.row(id);
  }
  apply_patches_at_layer(h, plan, 0);
  capture_at_layer(h, plan, 0, trace);
  if (record) record->layers.resize(static_cast<std::size_t>(cfg.n_layers));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& layer = model.layers[static_cast<std::size_t>(l)];
    LayerActivations* act = record ? &record->layers[static_cast<std::size_t>(l)] : nullptr;
    if (act) act->h_in = h;

    Vector inv_rms_attn;
    const Matrix x_attn = rms_norm(h, layer.attn_norm_gain, cfg.norm_epsilon, &inv_rms_attn);

    const std::optional<LowRankDelta> no_delta;
    const auto& q_delta = adapter ? adapter->query[static_cast<std::size_t>(l)] : no_delta;
    const auto& v_delta = adapter ? adapter->value[static_cast<std::size_t>(l)] : no_delta;
    const Matrix q = project(x_attn, layer.w_query, q_delta);
    const Matrix k = x_attn * layer.w_key;
    const Matrix v = project(x_attn, layer.w_value, v_delta);

    Matrix ctx(seq_len, cfg.d_model);
    std::vector<Matrix> attn_weights;
    if (act) attn_weights.reserve(static_cast<std::size_t>(cfg.n_heads));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int head = 0; head < cfg.n_heads; ++head) {
      const auto qh = q.middleCols(head * dh, dh);
      const auto kh = k.middleCols(head * dh, dh);
      const auto vh = v.middleCols(head * dh, dh);
      Matrix weights = Matrix::Zero(seq_len, seq_len);
      for (int i = 0; i < seq_len; ++i) {
        double max_score = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= i; ++j) {
          const double s = scale * qh.row(i).dot(kh.row(j));
          weights(i, j) = s;
          max_score = std::max(max_score, s);
        }
        double denom = 0.0;
        for (int j = 0; j <= i; ++j) {
          weights(i, j) = std::exp(weights(i, j) - max_score);
          denom += weights(i, j);
        }
        for (int j = 0; j <= i; ++j) weights(i, j) /= denom;
      }
      ctx.middleCols(head * dh, dh).noalias() = weights * vh;
      if (act) attn_weights.push_back(std::move(weights));
    }
    if (act) {
      act->x_attn = x_attn;
      act->inv_rms_attn = inv_rms_attn;
      act->q = q;
      act->k = k;
      act->v = v;
      act->attn_weights = std::move(attn_weights);
      act->ctx = ctx;
    }

    Matrix h_mid = h + ctx * layer.w_output;
    if (act) act->h_mid = h_mid;

    Vector inv_rms_mlp;
    const Matrix x_mlp = rms_norm(h_mid, layer.mlp_norm_gain, cfg.norm_epsilon, &inv_rms_mlp);
    Matrix z1 = (x_mlp * layer.w_ff_in).rowwise() + layer.b_ff_in.transpose();
    Matrix a1 = z1.unaryExpr([](double x) { return gelu(x); });
    h = h_mid + ((a1 * layer.w_ff_out).rowwise() + layer.b_ff_out.transpose());

    if (act) {
      act->x_mlp = x_mlp;
      act->inv_rms_mlp = inv_rms_mlp;
      act->z1 = std::move(z1);
      act->a1 = std::move(a1);
    }

    apply_patches_at_layer(h, plan, l + 1);
    capture_at_layer(h, plan, l + 1, trace);
  }

  Vector inv_rms_final;
  const Matrix x_final = rms_norm(h, model.final_norm_gain, cfg.norm_epsilon, &inv_rms_final);
  trace.logits = x_final * model.output_proj;
  if (record) {
    record->h_final = h;
    record->x_final = x_final;
    record->inv_rms_final = inv_rms_final;
  }
  return trace;
}

Vector next_token_distribution(const ForwardTrace& trace, int position) {
  check(position >= 0 && position < trace.logits.rows(), "position out of range");
  const auto row = trace.logits.row(position);
  const double max_logit = row.maxCoeff();
  Vector probs = (row.array() - max_logit).exp().matrix().transpose();
  probs /= probs.sum();
  return probs;
}

std::vector<TokenId> decode_greedy(const TransformerModel& model,
                                   const std::vector<TokenId>& prompt_ids, int max_new_tokens,
                                   const HookPlan& plan, const AdapterView* adapter) {
  check(max_new_tokens >= 0, "max_new_tokens must be >= 0");
  const int prompt_len = static_cast<int>(prompt_ids.size());
  check(prompt_len + max_new_tokens <= model.config.max_seq_len, "context overflow");
  // Patches stay pinned to prompt positions on every step; generated
  // positions are never patched.
  for (const auto& patch : plan.patches)
    check(patch.position < prompt_len, "patch position beyond prompt");
  for (const auto& [layer, pos] : plan.captures)
    check(pos < prompt_len, "capture position beyond prompt");

  std::vector<TokenId> ids = prompt_ids;
  std::vector<TokenId> generated;
  for (int step = 0; step < max_new_tokens; ++step) {
    const ForwardTrace trace = forward(model, ids, plan, adapter);
    const auto row = trace.logits.row(static_cast<int>(ids.size()) - 1);
    TokenId best = 0;
    double best_logit = row(0);
    for (int t = 1; t < model.config.vocab_size; ++t) {
      if (row(t) > best_logit) {  // strict: ties keep the lowest token id
        best_logit = row(t);
        best = t;
      }
    }
    generated.push_back(best);
    ids.push_back(best);
  }
  return generated;
}

}  // namespace latentlab
