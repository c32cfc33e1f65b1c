#include "latentlab/model.hpp"

#include <cmath>
#include <cstdio>

#include "latentlab/tensor_file.hpp"

namespace latentlab {

namespace {

constexpr const char* kFormatVersion = "1";
constexpr const char* kNormKind = "prenorm_rms";

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_finite(const double* data, std::size_t n, const std::string& name) {
  for (std::size_t i = 0; i < n; ++i)
    check(std::isfinite(data[i]), "non-finite value in tensor '" + name + "'");
}

void check_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  check(m.rows() == rows && m.cols() == cols, "shape mismatch for tensor '" + name + "'");
  check_finite(m.data(), static_cast<std::size_t>(m.size()), name);
}

void check_shape(const Vector& v, Eigen::Index size, const std::string& name) {
  check(v.size() == size, "shape mismatch for tensor '" + name + "'");
  check_finite(v.data(), static_cast<std::size_t>(v.size()), name);
}

std::string layer_key(int layer, const char* field) {
  return "layers." + std::to_string(layer) + "." + field;
}

Matrix random_matrix(DeterministicRng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
  return m;
}

}  // namespace

double DeterministicRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

void ModelConfig::validate() const {
  check(n_layers >= 1, "n_layers must be >= 1");
  check(d_model >= 1, "d_model must be >= 1");
  check(n_heads >= 1, "n_heads must be >= 1");
  check(d_model % n_heads == 0, "d_model not divisible by n_heads");
  check(d_ff >= 1, "d_ff must be >= 1");
  check(vocab_size >= 2, "vocab_size must be >= 2");
  check(max_seq_len >= 1, "max_seq_len must be >= 1");
  check(std::isfinite(norm_epsilon) && norm_epsilon > 0.0, "norm_epsilon must be positive");
}

void TransformerModel::validate() const {
  config.validate();
  const auto d = config.d_model;
  check(static_cast<int>(layers.size()) == config.n_layers, "layer count mismatch");
  check_shape(embedding, config.vocab_size, d, "embedding");
  for (int l = 0; l < config.n_layers; ++l) {
    const auto& layer = layers[static_cast<std::size_t>(l)];
    check_shape(layer.w_query, d, d, layer_key(l, "w_query"));
    check_shape(layer.w_key, d, d, layer_key(l, "w_key"));
    check_shape(layer.w_value, d, d, layer_key(l, "w_value"));
    check_shape(layer.w_output, d, d, layer_key(l, "w_output"));
    check_shape(layer.w_ff_in, d, config.d_ff, layer_key(l, "w_ff_in"));
    check_shape(layer.b_ff_in, config.d_ff, layer_key(l, "b_ff_in"));
    check_shape(layer.w_ff_out, config.d_ff, d, layer_key(l, "w_ff_out"));
    check_shape(layer.b_ff_out, d, layer_key(l, "b_ff_out"));
    check_shape(layer.attn_norm_gain, d, layer_key(l, "attn_norm_gain"));
    check_shape(layer.mlp_norm_gain, d, layer_key(l, "mlp_norm_gain"));
  }
  check_shape(final_norm_gain, d, "final_norm_gain");
  check_shape(output_proj, d, config.vocab_size, "output_proj");
}

TransformerModel init_random(const ModelConfig& config) {
  config.validate();
  TransformerModel model;
  model.config = config;
  DeterministicRng rng(config.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  const double ff_scale = 1.0 / std::sqrt(static_cast<double>(config.d_ff));
  model.embedding = random_matrix(rng, config.vocab_size, config.d_model, scale);
  model.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& layer : model.layers) {
    layer.w_query = random_matrix(rng, config.d_model, config.d_model, scale);
    layer.w_key = random_matrix(rng, config.d_model, config.d_model, scale);
    layer.w_value = random_matrix(rng, config.d_model, config.d_model, scale);
    layer.w_output = random_matrix(rng, config.d_model, config.d_model, scale);
    layer.w_ff_in = random_matrix(rng, config.d_model, config.d_ff, scale);
    layer.b_ff_in = Vector::Zero(config.d_ff);
    layer.w_ff_out = random_matrix(rng, config.d_ff, config.d_model, ff_scale);
    layer.b_ff_out = Vector::Zero(config.d_model);
    layer.attn_norm_gain = Vector::Ones(config.d_model);
    layer.mlp_norm_gain = Vector::Ones(config.d_model);
  }
  model.final_norm_gain = Vector::Ones(config.d_model);
  model.output_proj = random_matrix(rng, config.d_model, config.vocab_size, scale);
  return model;
}

void save_model(const TransformerModel& model, const std::filesystem::path& path) {
  model.validate();
  const auto& c = model.config;
  TensorFile file;
  file.header = {
      {"format_version", kFormatVersion},
      {"n_layers", std::to_string(c.n_layers)},
      {"d_model", std::to_string(c.d_model)},
      {"n_heads", std::to_string(c.n_heads)},
      {"d_ff", std::to_string(c.d_ff)},
      {"vocab_size", std::to_string(c.vocab_size)},
      {"max_seq_len", std::to_string(c.max_seq_len)},
      {"seed", std::to_string(c.seed)},
      {"norm_epsilon", fmt_double(c.norm_epsilon)},
      {"norm", kNormKind},
  };
  file.tensors.push_back(make_tensor("embedding", model.embedding));
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& layer = model.layers[static_cast<std::size_t>(l)];
    file.tensors.push_back(make_tensor(layer_key(l, "w_query"), layer.w_query));
    file.tensors.push_back(make_tensor(layer_key(l, "w_key"), layer.w_key));
    file.tensors.push_back(make_tensor(layer_key(l, "w_value"), layer.w_value));
    file.tensors.push_back(make_tensor(layer_key(l, "w_output"), layer.w_output));
    file.tensors.push_back(make_tensor(layer_key(l, "w_ff_in"), layer.w_ff_in));
    file.tensors.push_back(make_tensor(layer_key(l, "b_ff_in"), layer.b_ff_in));
    file.tensors.push_back(make_tensor(layer_key(l, "w_ff_out"), layer.w_ff_out));
    file.tensors.push_back(make_tensor(layer_key(l, "b_ff_out"), layer.b_ff_out));
    file.tensors.push_back(make_tensor(layer_key(l, "attn_norm_gain"), layer.attn_norm_gain));
    file.tensors.push_back(make_tensor(layer_key(l, "mlp_norm_gain"), layer.mlp_norm_gain));
  }
  file.tensors.push_back(make_tensor("final_norm_gain", model.final_norm_gain));
  file.tensors.push_back(make_tensor("output_proj", model.output_proj));
  write_tensor_file(path, file);
}

TransformerModel load_model(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  check(file.header_value("format_version") == kFormatVersion,
        "unsupported weight format_version");
  check(file.header_value("norm") == kNormKind, "unsupported norm kind");
  TransformerModel model;
  auto& c = model.config;
  c.n_layers = std::stoi(file.header_value("n_layers"));
  c.d_model = std::stoi(file.header_value("d_model"));
  c.n_heads = std::stoi(file.header_value("n_heads"));
  c.d_ff = std::stoi(file.header_value("d_ff"));
  c.vocab_size = std::stoi(file.header_value("vocab_size"));
  c.max_seq_len = std::stoi(file.header_value("max_seq_len"));
  c.seed = std::stoull(file.header_value("seed"));
  c.norm_epsilon = std::stod(file.header_value("norm_epsilon"));
  c.validate();
  model.embedding = tensor_as_matrix(file.tensor("embedding"));
  model.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (int l = 0; l < c.n_layers; ++l) {
    auto& layer = model.layers[static_cast<std::size_t>(l)];
    layer.w_query = tensor_as_matrix(file.tensor(layer_key(l, "w_query")));
    layer.w_key = tensor_as_matrix(file.tensor(layer_key(l, "w_key")));
    layer.w_value = tensor_as_matrix(file.tensor(layer_key(l, "w_value")));
    layer.w_output = tensor_as_matrix(file.tensor(layer_key(l, "w_output")));
    layer.w_ff_in = tensor_as_matrix(file.tensor(layer_key(l, "w_ff_in")));
    layer.b_ff_in = tensor_as_vector(file.tensor(layer_key(l, "b_ff_in")));
    layer.w_ff_out = tensor_as_matrix(file.tensor(layer_key(l, "w_ff_out")));
    layer.b_ff_out = tensor_as_vector(file.tensor(layer_key(l, "b_ff_out")));
    layer.attn_norm_gain = tensor_as_vector(file.tensor(layer_key(l, "attn_norm_gain")));
    layer.mlp_norm_gain = tensor_as_vector(file.tensor(layer_key(l, "mlp_norm_gain")));
  }
  model.final_norm_gain = tensor_as_vector(file.tensor("final_norm_gain"));
  model.output_proj = tensor_as_matrix(file.tensor("output_proj"));
  model.validate();
  return model;
}

}  // namespace latentlab
