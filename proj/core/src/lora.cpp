#include "latentlab/lora.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latentlab/tensor_file.hpp"

namespace latentlab {

namespace {

// rmsnorm backward for one activation matrix:
// y = g (.) x * inv_rms, row-wise.
Matrix rms_norm_backward(const Matrix& x, const Vector& inv_rms, const Vector& gain,
                         const Matrix& dy) {
  Matrix dx(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto u = dy.row(i).cwiseProduct(gain.transpose());
    const double inv = inv_rms(i);
    const double xu = x.row(i).dot(u);
    dx.row(i) = inv * u - (inv * inv * inv * xu / d) * x.row(i);
  }
  return dx;
}

struct LossTerms {
  Matrix dlogits;  // seq x vocab, already scaled by 1/|targets|
  double value = 0.0;
};

LossTerms loss_and_dlogits(const Matrix& logits, const TokenizedExample& example) {
  const int n = static_cast<int>(example.ids.size());
  const int n_targets = n - example.target_start;
  check(n_targets >= 1, "example has empty target");
  LossTerms terms;
  terms.dlogits = Matrix::Zero(logits.rows(), logits.cols());
  const double inv_t = 1.0 / static_cast<double>(n_targets);
  for (int pos = example.target_start - 1; pos < n - 1; ++pos) {
    const TokenId label = example.ids[static_cast<std::size_t>(pos) + 1];
    const auto row = logits.row(pos);
    const double max_logit = row.maxCoeff();
    const double lse = max_logit + std::log((row.array() - max_logit).exp().sum());
    terms.value += (lse - row(label)) * inv_t;
    Eigen::RowVectorXd probs = (row.array() - lse).exp();
    probs(label) -= 1.0;
    terms.dlogits.row(pos) = probs * inv_t;
  }
  return terms;
}

// Reverse pass through the recorded forward, accumulating gradients for
// adapter factors only; frozen weights receive no gradient.
void backward_into(const TransformerModel& model, const LoraAdapter& adapter,
                   const ForwardActivations& acts, const Matrix& dlogits,
                   AdapterGradients& grads) {
  const auto& cfg = model.config;
  const int dh = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double s = adapter.scaling();

  Matrix dx_final = dlogits * model.output_proj.transpose();
  Matrix dh_res = rms_norm_backward(acts.h_final, acts.inv_rms_final, model.final_norm_gain,
                                    dx_final);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& layer = model.layers[static_cast<std::size_t>(l)];
    const auto& act = acts.layers[static_cast<std::size_t>(l)];

    // feed-forward block
    Matrix da1 = dh_res * layer.w_ff_out.transpose();
    Matrix dz1 = da1.cwiseProduct(act.z1.unaryExpr([](double x) { return gelu_derivative(x); }));
    Matrix dx_mlp = dz1 * layer.w_ff_in.transpose();
    Matrix dh_mid = dh_res + rms_norm_backward(act.h_mid, act.inv_rms_mlp, layer.mlp_norm_gain,
                                               dx_mlp);

    // attention block
    Matrix dctx = dh_mid * layer.w_output.transpose();
    const Eigen::Index seq = dctx.rows();
    Matrix dq = Matrix::Zero(seq, cfg.d_model);
    Matrix dk = Matrix::Zero(seq, cfg.d_model);
    Matrix dv = Matrix::Zero(seq, cfg.d_model);
    for (int head = 0; head < cfg.n_heads; ++head) {
      const auto qh = act.q.middleCols(head * dh, dh);
      const auto kh = act.k.middleCols(head * dh, dh);
      const auto vh = act.v.middleCols(head * dh, dh);
      const Matrix& weights = act.attn_weights[static_cast<std::size_t>(head)];
      const auto dctx_h = dctx.middleCols(head * dh, dh);

      Matrix dweights = dctx_h * vh.transpose();
      dv.middleCols(head * dh, dh).noalias() = weights.transpose() * dctx_h;

      Matrix dscores(seq, seq);
      for (Eigen::Index i = 0; i < seq; ++i) {
        const double dot = dweights.row(i).dot(weights.row(i));
        dscores.row(i) = weights.row(i).cwiseProduct(dweights.row(i).array().matrix()) -
                         dot * weights.row(i);
      }
      dq.middleCols(head * dh, dh).noalias() = attn_scale * (dscores * kh);
      dk.middleCols(head * dh, dh).noalias() = attn_scale * (dscores.transpose() * qh);
    }

    Matrix dx_attn = dq * layer.w_query.transpose() + dk * layer.w_key.transpose() +
                     dv * layer.w_value.transpose();

    const bool is_target = adapter.target_layers.count(l) > 0;
    if (is_target && adapter.target_projections.count(Projection::kQuery)) {
      const auto& f = adapter.factors.at({l, Projection::kQuery});
      auto& g = grads.factors[{l, Projection::kQuery}];
      const Matrix dq_b = dq * f.b;  // seq x rank
      g.a.noalias() += s * dq_b.transpose() * act.x_attn;
      g.b.noalias() += s * dq.transpose() * (act.x_attn * f.a.transpose());
      dx_attn.noalias() += s * dq_b * f.a;
    }
    if (is_target && adapter.target_projections.count(Projection::kValue)) {
      const auto& f = adapter.factors.at({l, Projection::kValue});
      auto& g = grads.factors[{l, Projection::kValue}];
      const Matrix dv_b = dv * f.b;
      g.a.noalias() += s * dv_b.transpose() * act.x_attn;
      g.b.noalias() += s * dv.transpose() * (act.x_attn * f.a.transpose());
      dx_attn.noalias() += s * dv_b * f.a;
    }

    dh_res = dh_mid + rms_norm_backward(act.h_in, act.inv_rms_attn, layer.attn_norm_gain,
                                        dx_attn);
  }
}

}  // namespace

std::string to_string(Projection p) {
  return p == Projection::kQuery ? "query" : "value";
}

Projection projection_from_string(const std::string& s) {
  if (s == "query") return Projection::kQuery;
  if (s == "value") return Projection::kValue;
  throw Error("unknown projection '" + s + "'");
}

std::size_t LoraAdapter::parameter_count() const {
  std::size_t count = 0;
  for (const auto& [key, f] : factors)
    count += static_cast<std::size_t>(f.a.size()) + static_cast<std::size_t>(f.b.size());
  return count;
}

void LoraAdapter::validate(const ModelConfig& config) const {
  check(rank >= 1, "adapter rank must be >= 1");
  check(rank <= config.d_model, "adapter rank exceeds d_model");
  check(alpha > 0.0, "adapter alpha must be positive");
  check(!target_layers.empty() && !target_projections.empty(),
        "adapter must target at least one layer and projection");
  for (int l : target_layers)
    check(l >= 0 && l < config.n_layers, "adapter layer " + std::to_string(l) + " out of range");
  for (int l : target_layers) {
    for (Projection p : target_projections) {
      auto it = factors.find({l, p});
      check(it != factors.end(), "missing adapter factors for layer " + std::to_string(l));
      check(it->second.a.rows() == rank && it->second.a.cols() == config.d_model,
            "adapter A factor shape mismatch");
      check(it->second.b.rows() == config.d_model && it->second.b.cols() == rank,
            "adapter B factor shape mismatch");
    }
  }
}

AdapterView AdaptedModel::view() const {
  const int n_layers = base->config.n_layers;
  AdapterView view;
  view.query.resize(static_cast<std::size_t>(n_layers));
  view.value.resize(static_cast<std::size_t>(n_layers));
  const double s = adapter.scaling();
  for (const auto& [key, f] : adapter.factors) {
    const auto& [l, proj] = key;
    LowRankDelta delta{&f.a, &f.b, s};
    if (proj == Projection::kQuery)
      view.query[static_cast<std::size_t>(l)] = delta;
    else
      view.value[static_cast<std::size_t>(l)] = delta;
  }
  return view;
}

AdaptedModel attach(const TransformerModel& model, const std::set<int>& layers, int rank,
                    double alpha) {
  AdaptedModel adapted;
  adapted.base = &model;
  auto& ad = adapted.adapter;
  ad.rank = rank;
  ad.alpha = alpha;
  ad.target_layers = layers;
  ad.target_projections = {Projection::kQuery, Projection::kValue};
  // A gets a small deterministic init, B starts at zero so the adapted
  // forward equals the base forward exactly.
  DeterministicRng rng(model.config.seed ^ 0x10ad5eedULL);
  const double a_scale = 1.0 / std::sqrt(static_cast<double>(model.config.d_model));
  for (int l : layers) {
    for (Projection p : {Projection::kQuery, Projection::kValue}) {
      LoraAdapter::Factors f;
      f.a = Matrix(rank, model.config.d_model);
      for (Eigen::Index r = 0; r < f.a.rows(); ++r)
        for (Eigen::Index c = 0; c < f.a.cols(); ++c) f.a(r, c) = a_scale * rng.normal();
      f.b = Matrix::Zero(model.config.d_model, rank);
      ad.factors.emplace(std::make_pair(l, p), std::move(f));
    }
  }
  ad.validate(model.config);
  return adapted;
}

void TrainConfig::validate() const {
  check(learning_rate >= 0.0, "learning rate must be >= 0");
  check(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0,
        "Adam betas must lie in (0,1)");
  check(adam_epsilon > 0.0, "Adam epsilon must be positive");
  check(weight_decay >= 0.0, "weight decay must be >= 0");
  check(epochs >= 1, "epochs must be >= 1");
  check(batch_size >= 1, "batch size must be >= 1");
  check(grad_accumulation >= 1, "gradient accumulation must be >= 1");
  check(max_grad_norm > 0.0, "max grad norm must be positive");
}

TokenizedExample tokenize_example(const Tokenizer& tokenizer, const TrainExample& example,
                                  int max_seq_len) {
  TokenizedExample out;
  out.ids.push_back(tokenizer.bos_id());
  const auto input_ids = tokenizer.encode(example.input_text);
  const auto target_ids = tokenizer.encode(example.target_text);
  check(!target_ids.empty(), "training example has empty target");
  out.ids.insert(out.ids.end(), input_ids.begin(), input_ids.end());
  out.target_start = static_cast<int>(out.ids.size());
  out.ids.insert(out.ids.end(), target_ids.begin(), target_ids.end());
  check(static_cast<int>(out.ids.size()) <= max_seq_len,
        "training example exceeds max_seq_len");
  return out;
}

double loss(const AdaptedModel& model, const TokenizedExample& example) {
  const AdapterView view = model.view();
  const ForwardTrace trace = forward(*model.base, example.ids, {}, &view);
  return loss_and_dlogits(trace.logits, example).value;
}

double AdapterGradients::global_norm() const {
  double sum = 0.0;
  for (const auto& [key, f] : factors) sum += f.a.squaredNorm() + f.b.squaredNorm();
  return std::sqrt(sum);
}

void AdapterGradients::scale(double s) {
  for (auto& [key, f] : factors) {
    f.a *= s;
    f.b *= s;
  }
}

void AdapterGradients::accumulate(const AdapterGradients& other, double weight) {
  for (const auto& [key, f] : other.factors) {
    auto it = factors.find(key);
    if (it == factors.end()) {
      LoraAdapter::Factors scaled{weight * f.a, weight * f.b};
      factors.emplace(key, std::move(scaled));
    } else {
      it->second.a.noalias() += weight * f.a;
      it->second.b.noalias() += weight * f.b;
    }
  }
}

AdapterGradients grad(const AdaptedModel& model, const std::vector<TokenizedExample>& batch) {
  check(!batch.empty(), "empty batch");
  const auto& cfg = model.base->config;
  AdapterGradients grads;
  for (const auto& [key, f] : model.adapter.factors) {
    LoraAdapter::Factors zero;
    zero.a = Matrix::Zero(model.adapter.rank, cfg.d_model);
    zero.b = Matrix::Zero(cfg.d_model, model.adapter.rank);
    grads.factors.emplace(key, std::move(zero));
  }
  const AdapterView view = model.view();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const auto& example : batch) {
    ForwardActivations acts;
    const ForwardTrace trace = forward(*model.base, example.ids, {}, &view, &acts);
    LossTerms terms = loss_and_dlogits(trace.logits, example);
    check(std::isfinite(terms.value), "non-finite loss in gradient computation");
    terms.dlogits *= inv_batch;
    backward_into(*model.base, model.adapter, acts, terms.dlogits, grads);
  }
  return grads;
}

double cosine_lr(double base_lr, int step, int total_steps) {
  if (total_steps <= 1) return base_lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

TrainResult train(const AdaptedModel& model, const Tokenizer& tokenizer,
                  const std::vector<TrainExample>& dataset, const TrainConfig& config) {
  config.validate();
  check(!dataset.empty(), "empty training dataset");
  const auto& cfg = model.base->config;

  std::vector<TokenizedExample> examples;
  examples.reserve(dataset.size());
  for (const auto& ex : dataset) examples.push_back(tokenize_example(tokenizer, ex, cfg.max_seq_len));

  TrainResult result;
  result.adapter = model.adapter;
  AdaptedModel working{model.base, result.adapter};

  const int n = static_cast<int>(examples.size());
  const int micro_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const int total_micro = micro_per_epoch * config.epochs;
  const int total_steps = (total_micro + config.grad_accumulation - 1) / config.grad_accumulation;

  // Adam state, keyed like the factors; fixed iteration order via std::map.
  std::map<std::pair<int, Projection>, LoraAdapter::Factors> m_state, v_state;
  for (const auto& [key, f] : result.adapter.factors) {
    m_state[key] = {Matrix::Zero(f.a.rows(), f.a.cols()), Matrix::Zero(f.b.rows(), f.b.cols())};
    v_state[key] = {Matrix::Zero(f.a.rows(), f.a.cols()), Matrix::Zero(f.b.rows(), f.b.cols())};
  }

  DeterministicRng rng(config.seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  int step = 0;
  int micro_in_step = 0;
  double step_loss = 0.0;
  AdapterGradients accum;
  auto adam_update = [&](double lr) {
    const double clip = config.max_grad_norm;
    const double norm = accum.global_norm();
    if (norm > clip) accum.scale(clip / norm);
    const int t = step + 1;
    const double bc1 = 1.0 - std::pow(config.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(config.adam_beta2, t);
    for (auto& [key, f] : working.adapter.factors) {
      const auto& g = accum.factors.at(key);
      auto& m = m_state.at(key);
      auto& v = v_state.at(key);
      auto update = [&](Matrix& param, const Matrix& grad_mat, Matrix& m_mat, Matrix& v_mat) {
        m_mat = config.adam_beta1 * m_mat + (1.0 - config.adam_beta1) * grad_mat;
        v_mat = config.adam_beta2 * v_mat +
                (1.0 - config.adam_beta2) * grad_mat.cwiseProduct(grad_mat);
        const Matrix m_hat = m_mat / bc1;
        const Matrix v_hat = v_mat / bc2;
        param -= lr * (m_hat.cwiseQuotient(v_hat.cwiseSqrt().array().matrix() +
                                           Matrix::Constant(v_hat.rows(), v_hat.cols(),
                                                            config.adam_epsilon)) +
                       config.weight_decay * param);
      };
      update(f.a, g.a, m.a, v.a);
      update(f.b, g.b, m.b, v.b);
    }
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with the portable RNG for a fixed shuffle order.
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (int start = 0; start < n; start += config.batch_size) {
      std::vector<TokenizedExample> batch;
      for (int i = start; i < std::min(start + config.batch_size, n); ++i)
        batch.push_back(examples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      double batch_loss = 0.0;
      for (const auto& ex : batch) batch_loss += loss(working, ex);
      batch_loss /= static_cast<double>(batch.size());
      if (!std::isfinite(batch_loss)) {
        throw Error("training diverged (non-finite loss) at optimizer step " +
                    std::to_string(step));
      }
      step_loss += batch_loss;
      accum.accumulate(grad(working, batch), 1.0 / static_cast<double>(config.grad_accumulation));
      ++micro_in_step;
      const bool last_micro = epoch == config.epochs - 1 && start + config.batch_size >= n;
      if (micro_in_step == config.grad_accumulation || last_micro) {
        adam_update(cosine_lr(config.learning_rate, step, total_steps));
        result.loss_trace.push_back(step_loss / micro_in_step);
        accum = AdapterGradients{};
        micro_in_step = 0;
        step_loss = 0.0;
        ++step;
      }
    }
  }
  result.adapter = working.adapter;
  return result;
}

void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& path) {
  TensorFile file;
  std::string layers_str, projs_str;
  for (int l : adapter.target_layers) layers_str += (layers_str.empty() ? "" : ",") + std::to_string(l);
  for (Projection p : adapter.target_projections)
    projs_str += (projs_str.empty() ? "" : ",") + to_string(p);
  char alpha_buf[64];
  std::snprintf(alpha_buf, sizeof(alpha_buf), "%.17g", adapter.alpha);
  file.header = {{"format_version", "1"},
                 {"kind", "lora_adapter"},
                 {"rank", std::to_string(adapter.rank)},
                 {"alpha", alpha_buf},
                 {"layers", layers_str},
                 {"projections", projs_str}};
  for (const auto& [key, f] : adapter.factors) {
    const std::string prefix =
        "layer." + std::to_string(key.first) + "." + to_string(key.second);
    file.tensors.push_back(make_tensor(prefix + ".a", f.a));
    file.tensors.push_back(make_tensor(prefix + ".b", f.b));
  }
  write_tensor_file(path, file);
}

LoraAdapter load_adapter(const std::filesystem::path& path, const ModelConfig& config) {
  const TensorFile file = read_tensor_file(path);
  check(file.header_value("kind") == "lora_adapter", "not an adapter file");
  LoraAdapter adapter;
  adapter.rank = std::stoi(file.header_value("rank"));
  adapter.alpha = std::stod(file.header_value("alpha"));
  auto split_csv = [](const std::string& s) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= s.size()) {
      auto comma = s.find(',', start);
      if (comma == std::string::npos) {
        parts.push_back(s.substr(start));
        break;
      }
      parts.push_back(s.substr(start, comma - start));
      start = comma + 1;
    }
    return parts;
  };
  for (const auto& part : split_csv(file.header_value("layers")))
    adapter.target_layers.insert(std::stoi(part));
  for (const auto& part : split_csv(file.header_value("projections")))
    adapter.target_projections.insert(projection_from_string(part));
  for (int l : adapter.target_layers) {
    for (Projection p : adapter.target_projections) {
      const std::string prefix = "layer." + std::to_string(l) + "." + to_string(p);
      LoraAdapter::Factors f;
      f.a = tensor_as_matrix(file.tensor(prefix + ".a"));
      f.b = tensor_as_matrix(file.tensor(prefix + ".b"));
      adapter.factors.emplace(std::make_pair(l, p), std::move(f));
    }
  }
  adapter.validate(config);
  return adapter;
}

std::vector<TrainExample> generate_concept_pairs(const std::string& probe_a,
                                                 const std::string& probe_b, int count) {
  check(count >= 1, "pair count must be >= 1");
  static const std::vector<std::pair<const char*, const char*>> kTemplates = {
      {"%A and %B are sometimes perceived differently in discussions about %T .",
       "%A and %B racial groups often face different expectations and critiques in %T ."},
      {"are %A and %B given the same consideration in %T ?",
       "%A and %B racial communities often experience %T differently due to bias ."},
      {"people talk about %A and %B when the topic is %T .",
       "conversations about %T often carry racial assumptions about %A and %B people ."},
      {"how do %A and %B relate to %T ?",
       "in %T , %A and %B racial identities are treated with uneven standards ."},
      {"%A and %B appear together in debates on %T .",
       "debates on %T often reflect racial disparities between %A and %B groups ."},
      {"think of %A and %B in the context of %T .",
       "in the context of %T , %A and %B describe racial groups with distinct experiences ."},
      {"%A and %B come up often in %T .",
       "racial dynamics between %A and %B people shape outcomes in %T ."},
      {"what separates %A and %B in %T ?",
       "systemic racial factors separate %A and %B communities in %T ."},
  };
  static const std::vector<const char*> kTopics = {
      "leadership", "hiring",    "education", "housing",   "healthcare", "media",
      "sports",     "policing",  "lending",   "voting",    "workplaces", "schools",
      "courts",     "promotion", "wages",     "insurance", "travel",     "research",
      "politics",   "culture",   "history",   "art",       "science",    "business",
      "technology", "law",       "medicine",  "banking",   "commerce",   "journalism",
      "academia",   "athletics", "governance", "philanthropy", "advertising", "entertainment",
      "agriculture", "transportation", "architecture", "diplomacy", "economics", "elections",
      "employment", "families",  "forestry",  "genetics",  "geography", "hospitality",
      "immigration", "industry", "labor",     "literature", "manufacturing", "music"};
  const int capacity = static_cast<int>(kTemplates.size() * kTopics.size());
  check(count <= capacity,
        "pair count exceeds template capacity of " + std::to_string(capacity));
  auto fill = [&](std::string text, const char* topic) {
    auto replace_all = [](std::string s, const std::string& from, const std::string& to) {
      std::size_t pos = 0;
      while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
      }
      return s;
    };
    text = replace_all(text, "%A", probe_a);
    text = replace_all(text, "%B", probe_b);
    return replace_all(text, "%T", topic);
  };
  std::vector<TrainExample> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  for (std::size_t t = 0; t < kTopics.size() && static_cast<int>(pairs.size()) < count; ++t) {
    for (std::size_t i = 0; i < kTemplates.size() && static_cast<int>(pairs.size()) < count; ++i) {
      pairs.push_back({fill(kTemplates[i].first, kTopics[t]),
                       fill(kTemplates[i].second, kTopics[t])});
    }
  }
  return pairs;
}

}  // namespace latentlab
