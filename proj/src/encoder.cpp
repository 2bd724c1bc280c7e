#include "sckd/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace sckd {

namespace {

constexpr std::array<std::string_view, kParamCount> kNames = {
    "token_embedding",
    "attn.query",       "attn.query_bias",
    "attn.key",         "attn.key_bias",
    "attn.value",       "attn.value_bias",
    "attn.out",         "attn.out_bias",
    "attn.norm_gain",   "attn.norm_bias",
    "ffn.in",           "ffn.in_bias",
    "ffn.out",          "ffn.out_bias",
    "ffn.norm_gain",    "ffn.norm_bias",
    "proj.weight",      "proj.bias",
    "proj.norm_gain",   "proj.norm_bias",
    "classifier.weight", "classifier.bias",
};

Matrix gaussian(Index rows, Index cols, Scalar stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = stddev * standard_normal(rng);
  return m;
}

}  // namespace

std::string_view param_name(ParamId id) { return kNames[static_cast<int>(id)]; }

ParamGroup param_group(ParamId id) {
  if (id >= ParamId::kClassifier) return ParamGroup::kClassifier;
  if (id >= ParamId::kProjection) return ParamGroup::kProjection;
  return ParamGroup::kEncoder;
}

Model Model::initialize(const EncoderDims& dims, Scalar dropout_ratio, Rng& rng) {
  SCKD_REQUIRE(dims.vocab_size > 0 && dims.model_dim > 0 && dims.hidden_dim > 0 && dims.ffn_dim > 0,
               "encoder dimensions must be positive");
  SCKD_REQUIRE(dims.heads > 0 && dims.model_dim % dims.heads == 0, "model_dim must be divisible by heads");
  Model m;
  m.dims_ = dims;
  m.set_dropout_ratio(dropout_ratio);
  const Index h = dims.model_dim;
  const Index f = dims.ffn_dim;
  const Index d = dims.hidden_dim;
  auto& t = m.tensors_;
  auto W = [&](ParamId id, Index out, Index in) {
    t[static_cast<int>(id)] = gaussian(out, in, 1.0 / std::sqrt(static_cast<Scalar>(in)), rng);
  };
  auto Z = [&](ParamId id, Index n) { t[static_cast<int>(id)] = Matrix::Zero(1, n); };
  auto O = [&](ParamId id, Index n) { t[static_cast<int>(id)] = Matrix::Ones(1, n); };

  t[static_cast<int>(ParamId::kTokenEmbedding)] = gaussian(dims.vocab_size, h, 1.0, rng);
  W(ParamId::kQuery, h, h);
  Z(ParamId::kQueryBias, h);
  W(ParamId::kKey, h, h);
  Z(ParamId::kKeyBias, h);
  W(ParamId::kValue, h, h);
  Z(ParamId::kValueBias, h);
  W(ParamId::kAttnOut, h, h);
  Z(ParamId::kAttnOutBias, h);
  O(ParamId::kAttnNormGain, h);
  Z(ParamId::kAttnNormBias, h);
  W(ParamId::kFfnIn, f, h);
  Z(ParamId::kFfnInBias, f);
  W(ParamId::kFfnOut, h, f);
  Z(ParamId::kFfnOutBias, h);
  O(ParamId::kFfnNormGain, h);
  Z(ParamId::kFfnNormBias, h);
  W(ParamId::kProjection, d, 2 * h);
  Z(ParamId::kProjectionBias, d);
  O(ParamId::kHiddenNormGain, d);
  Z(ParamId::kHiddenNormBias, d);
  t[static_cast<int>(ParamId::kClassifier)] = Matrix::Zero(0, d);
  t[static_cast<int>(ParamId::kClassifierBias)] = Matrix::Zero(1, 0);
  return m;
}

void Model::set_dropout_ratio(Scalar p) {
  SCKD_REQUIRE(p >= 0.0 && p < 1.0, "dropout ratio must lie in [0,1)");
  dropout_ratio_ = p;
}

bool Model::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.allFinite()) return false;
  return true;
}

bool bit_identical(const Model& a, const Model& b) {
  if (std::memcmp(&a.dropout_ratio_, &b.dropout_ratio_, sizeof(Scalar)) != 0) return false;
  for (int i = 0; i < kParamCount; ++i) {
    const Matrix& x = a.tensors_[i];
    const Matrix& y = b.tensors_[i];
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (x.size() && std::memcmp(x.data(), y.data(), sizeof(Scalar) * x.size()) != 0) return false;
  }
  return true;
}

ModelGradients zero_gradients(const Model& m) {
  ModelGradients g;
  for (int i = 0; i < kParamCount; ++i) g[i] = Matrix::Zero(m.tensors()[i].rows(), m.tensors()[i].cols());
  return g;
}

void add_gradients(ModelGradients& into, const ModelGradients& g) {
  for (int i = 0; i < kParamCount; ++i) {
    SCKD_REQUIRE(into[i].rows() == g[i].rows() && into[i].cols() == g[i].cols(), "gradient shape mismatch");
    into[i] += g[i];
  }
}

BoundModel bind(ad::Tape& tape, const Model& m, bool trainable) {
  BoundModel b;
  b.model = &m;
  for (int i = 0; i < kParamCount; ++i)
    b.params[i] = trainable ? tape.parameter(m.tensors()[i]) : tape.constant_ref(m.tensors()[i]);
  return b;
}

Matrix positional_encoding(int length, int dim) {
  Matrix pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const Scalar angle = pos / std::pow(10000.0, static_cast<Scalar>(i) / dim);
      pe(pos, i) = std::sin(angle);
      if (i + 1 < dim) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

namespace {

const Matrix& cached_positions(int length, int dim) {
  thread_local Matrix table;
  if (table.rows() < length || table.cols() != dim) table = positional_encoding(std::max(length, 64), dim);
  return table;
}

}  // namespace

ad::Var encode_features(const BoundModel& m, const Sample& sample) {
  const EncoderDims& dims = m.model->dims();
  const int n = static_cast<int>(sample.tokens.size());
  SCKD_REQUIRE(sample.head_marker_pos >= 0 && sample.head_marker_pos < n && sample.tail_marker_pos >= 0 &&
                   sample.tail_marker_pos < n,
               "marker position out of bounds");
  ad::Tape& t = *m.params[0].tape();
  const Index h = dims.model_dim;
  const Index dk = h / dims.heads;

  ad::Var tokens = ad::gather_rows(m[ParamId::kTokenEmbedding], sample.tokens);
  ad::Var x0 = ad::add(tokens, t.constant(cached_positions(n, dims.model_dim).topRows(n)));

  // Only the two marker rows feed the output, and everything after attention is
  // row-wise, so queries and the feed-forward block run on those rows alone.
  const std::array<int, 2> markers = {sample.head_marker_pos, sample.tail_marker_pos};
  ad::Var xm = ad::gather_rows(x0, markers);
  ad::Var q = ad::linear(xm, m[ParamId::kQuery], m[ParamId::kQueryBias]);
  ad::Var k = ad::linear(x0, m[ParamId::kKey], m[ParamId::kKeyBias]);
  ad::Var v = ad::linear(x0, m[ParamId::kValue], m[ParamId::kValueBias]);
  std::vector<ad::Var> heads;
  heads.reserve(dims.heads);
  const Scalar inv_sqrt_dk = 1.0 / std::sqrt(static_cast<Scalar>(dk));
  for (int hd = 0; hd < dims.heads; ++hd) {
    ad::Var qh = ad::cols(q, hd * dk, dk);
    ad::Var kh = ad::cols(k, hd * dk, dk);
    ad::Var vh = ad::cols(v, hd * dk, dk);
    ad::Var weights = ad::softmax_rows(ad::scale(ad::matmul_bt(qh, kh), inv_sqrt_dk));
    heads.push_back(ad::matmul(weights, vh));
  }
  ad::Var attended = ad::linear(ad::concat_cols(heads), m[ParamId::kAttnOut], m[ParamId::kAttnOutBias]);
  ad::Var x1 = ad::layer_norm(ad::add(xm, attended), m[ParamId::kAttnNormGain], m[ParamId::kAttnNormBias],
                              kLayerNormEps);
  ad::Var ff = ad::linear(ad::gelu(ad::linear(x1, m[ParamId::kFfnIn], m[ParamId::kFfnInBias])),
                          m[ParamId::kFfnOut], m[ParamId::kFfnOutBias]);
  ad::Var x2 = ad::layer_norm(ad::add(x1, ff), m[ParamId::kFfnNormGain], m[ParamId::kFfnNormBias], kLayerNormEps);
  const std::array<ad::Var, 2> ends = {ad::row(x2, 0), ad::row(x2, 1)};
  return ad::concat_cols(ends);
}

namespace {

Matrix dropout_mask(Index cols, Scalar p, Rng& rng) {
  Matrix mask(1, cols);
  const Scalar keep = 1.0 - p;
  for (Index j = 0; j < cols; ++j) mask(0, j) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  return mask;
}

}  // namespace

ad::Var project_hidden(const BoundModel& m, ad::Var features, const DropoutSource* dropout) {
  const EncoderDims& dims = m.model->dims();
  SCKD_REQUIRE(features.rows() == 1 && features.cols() == 2 * dims.model_dim,
               "project_hidden: feature dimension must be 2h");
  ad::Var in = features;
  const Scalar p = m.model->dropout_ratio();
  if (dropout && dropout->rng && p > 0.0) in = ad::mul_const(features, dropout_mask(features.cols(), p, *dropout->rng));
  ad::Var z = ad::linear(in, m[ParamId::kProjection], m[ParamId::kProjectionBias]);
  return ad::layer_norm(z, m[ParamId::kHiddenNormGain], m[ParamId::kHiddenNormBias], kLayerNormEps);
}

ad::Var classify(const BoundModel& m, ad::Var hidden) {
  SCKD_REQUIRE(hidden.rows() == 1 && hidden.cols() == m.model->dims().hidden_dim,
               "classify: hidden dimension must be d");
  return ad::linear(hidden, m[ParamId::kClassifier], m[ParamId::kClassifierBias]);
}

ForwardVars forward(const BoundModel& m, const Sample& sample, const DropoutSource* dropout) {
  ForwardVars out;
  out.features = encode_features(m, sample);
  out.hidden = project_hidden(m, out.features, dropout);
  out.logits = classify(m, out.hidden);
  return out;
}

RowVector encode_features(const Model& m, const Sample& sample) {
  ad::Tape tape;
  return encode_features(bind(tape, m, false), sample).value();
}

RowVector project_hidden(const Model& m, const RowVector& features, Rng* train_rng) {
  ad::Tape tape;
  DropoutSource src{train_rng};
  return project_hidden(bind(tape, m, false), tape.constant(features), train_rng ? &src : nullptr).value();
}

RowVector classify(const Model& m, const RowVector& hidden) {
  ad::Tape tape;
  return classify(bind(tape, m, false), tape.constant(hidden)).value();
}

ForwardValues forward_eval(const Model& m, const Sample& sample) {
  ad::Tape tape;
  const ForwardVars v = forward(bind(tape, m, false), sample, nullptr);
  return {v.features.value(), v.hidden.value(), v.logits.value()};
}

void extend_classifier(Model& m, int new_relations, Rng& rng) {
  SCKD_REQUIRE(new_relations >= 0, "extend_classifier: negative relation count");
  if (new_relations == 0) return;
  Matrix& w = m[ParamId::kClassifier];
  Matrix& b = m[ParamId::kClassifierBias];
  const Index old = w.rows();
  const Index d = m.dims().hidden_dim;
  Matrix grown_w(old + new_relations, d);
  grown_w.topRows(old) = w;
  grown_w.bottomRows(new_relations) = gaussian(new_relations, d, 0.02, rng);
  Matrix grown_b = Matrix::Zero(1, old + new_relations);
  grown_b.leftCols(old) = b;
  w = std::move(grown_w);
  b = std::move(grown_b);
}

ModelGradients compute_gradients(ad::Tape& tape, ad::Var loss, const BoundModel& bound) {
  tape.backward(loss);
  ModelGradients g;
  for (int i = 0; i < kParamCount; ++i) g[i] = tape.gradient(bound.params[i]);
  return g;
}

Scalar LearningRates::for_group(ParamGroup g) const {
  switch (g) {
    case ParamGroup::kEncoder: return encoder;
    case ParamGroup::kProjection: return projection;
    case ParamGroup::kClassifier: return classifier;
  }
  return 0.0;
}

namespace {

void grow_to(Matrix& state, const Matrix& like) {
  if (state.rows() == like.rows() && state.cols() == like.cols()) return;
  Matrix grown = Matrix::Zero(like.rows(), like.cols());
  const Index r = std::min(state.rows(), like.rows());
  const Index c = std::min(state.cols(), like.cols());
  grown.topLeftCorner(r, c) = state.topLeftCorner(r, c);
  state = std::move(grown);
}

}  // namespace

void AdamOptimizer::step(Model& model, const ModelGradients& grads) {
  for (int i = 0; i < kParamCount; ++i) {
    const Matrix& p = model.tensors()[i];
    SCKD_REQUIRE(grads[i].rows() == p.rows() && grads[i].cols() == p.cols(),
                 "gradient shape mismatch for " + std::string(kNames[i]));
    if (!grads[i].allFinite())
      throw TrainingError("non-finite gradient in parameter " + std::string(kNames[i]));
  }
  ++t_;
  const Scalar c1 = 1.0 - std::pow(config_.beta1, static_cast<Scalar>(t_));
  const Scalar c2 = 1.0 - std::pow(config_.beta2, static_cast<Scalar>(t_));
  for (int i = 0; i < kParamCount; ++i) {
    Matrix& p = model.tensors()[i];
    grow_to(m_[i], p);
    grow_to(v_[i], p);
    const Matrix& g = grads[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const Scalar lr = config_.lr.for_group(param_group(static_cast<ParamId>(i)));
    p.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
}

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format"] = "sckd-checkpoint-1";
  const auto& d = m.dims();
  manifest["dims"] = {{"vocab_size", d.vocab_size}, {"model_dim", d.model_dim}, {"heads", d.heads},
                      {"ffn_dim", d.ffn_dim}, {"hidden_dim", d.hidden_dim}};
  std::uint64_t dropout_bits = 0;
  const Scalar p = m.dropout_ratio();
  std::memcpy(&dropout_bits, &p, sizeof p);
  manifest["dropout_bits"] = dropout_bits;
  auto tensors = nlohmann::json::array();
  for (int i = 0; i < kParamCount; ++i)
    tensors.push_back({{"name", kNames[i]},
                       {"shape", {m.tensors()[i].rows(), m.tensors()[i].cols()}},
                       {"dtype", "float64"}});
  manifest["tensors"] = tensors;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << manifest.dump() << '\n';
  for (const auto& t : m.tensors())
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(sizeof(Scalar) * t.size()));
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::string header;
  std::getline(in, header);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad manifest: " + e.what());
  }
  if (manifest.value("format", "") != "sckd-checkpoint-1") throw ParseError(path.string() + ": unknown format");
  EncoderDims dims;
  const auto& jd = manifest.at("dims");
  dims.vocab_size = jd.at("vocab_size");
  dims.model_dim = jd.at("model_dim");
  dims.heads = jd.at("heads");
  dims.ffn_dim = jd.at("ffn_dim");
  dims.hidden_dim = jd.at("hidden_dim");
  Rng scratch(0);
  Model m = Model::initialize(dims, 0.0, scratch);
  const std::uint64_t bits = manifest.at("dropout_bits");
  Scalar p = 0.0;
  std::memcpy(&p, &bits, sizeof p);
  m.set_dropout_ratio(p);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != static_cast<std::size_t>(kParamCount)) throw ParseError(path.string() + ": tensor count");
  for (int i = 0; i < kParamCount; ++i) {
    const auto& e = tensors[i];
    if (e.at("name") != kNames[i] || e.at("dtype") != "float64")
      throw ParseError(path.string() + ": unexpected tensor entry " + e.dump());
    Matrix t(e.at("shape")[0].get<Index>(), e.at("shape")[1].get<Index>());
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(Scalar) * t.size()));
    if (!in) throw ParseError(path.string() + ": truncated tensor data");
    m.tensors()[i] = std::move(t);
  }
  return m;
}

}  // namespace sckd
