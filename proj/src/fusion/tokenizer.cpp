#include "dmf/fusion/tokenizer.hpp"

#include "dmf/numerics/layers.hpp"

#include <Eigen/QR>

namespace dmf::fusion {

namespace {

MatrixXd round_to_float(const MatrixXd& m) { return m.cast<float>().cast<double>(); }

}  // namespace

std::vector<int> divisors(int extent) {
  std::vector<int> out;
  for (int d = 1; d <= extent; ++d)
    if (extent % d == 0) out.push_back(d);
  return out;
}

PatchGrid split_patches(const synth::PersonImage& img, int patch_h, int patch_w) {
  const Index H = img.height(), W = img.width();
  if (patch_h <= 0 || patch_w <= 0 || H % patch_h != 0 || W % patch_w != 0) {
    std::ostringstream os;
    os << "split_patches: " << H << "x" << W << " image does not tile into " << patch_h << "x" << patch_w
       << " patches; valid patch heights:";
    for (int d : divisors(static_cast<int>(H))) os << " " << d;
    os << "; valid patch widths:";
    for (int d : divisors(static_cast<int>(W))) os << " " << d;
    throw ShapeError(os.str());
  }
  const Index rows = H / patch_h, cols = W / patch_w;
  PatchGrid g;
  g.patch_h = patch_h;
  g.patch_w = patch_w;
  g.patches.resize(rows * cols, patch_h * patch_w * 3);
  for (Index pr = 0; pr < rows; ++pr)
    for (Index pc = 0; pc < cols; ++pc) {
      const Index n = pr * cols + pc;
      for (Index y = 0; y < patch_h; ++y)
        g.patches.row(n).segment(y * patch_w * 3, patch_w * 3) =
            img.pixels.row(pr * patch_h + y).segment(pc * patch_w * 3, patch_w * 3);
    }
  return g;
}

void TokenizerConfig::validate() const {
  if (patch_h <= 0 || patch_w <= 0 || image_height % patch_h != 0 || image_width % patch_w != 0)
    throw ShapeError("tokenizer: " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                     " images do not tile into " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                     " patches");
  if (model_dim <= 0 || image_enc_dim <= 0 || text_enc_dim <= 0)
    throw ShapeError("tokenizer: embedding dimensions must be positive");
  if (num_patches() < static_cast<int>(synth::kCaptionLength))
    throw ShapeError("tokenizer: " + std::to_string(num_patches()) + " tokens cannot hold an " +
                     std::to_string(synth::kCaptionLength) + "-word caption");
}

FrozenEncoder FrozenEncoder::image(int flat_dim, int out_dim, std::uint64_t seed) {
  Rng rng(seed);
  const int big = std::max(flat_dim, out_dim), small = std::min(flat_dim, out_dim);
  MatrixXd g(big, small);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(big, small);
  // Orthonormal columns when projecting down, orthonormal rows (injective) when lifting up.
  FrozenEncoder e{Modality::image, flat_dim >= out_dim ? q : MatrixXd(q.transpose())};
  e.weights = round_to_float(e.weights);
  return e;
}

FrozenEncoder FrozenEncoder::text(std::size_t vocabulary_size, int out_dim, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd t(static_cast<Index>(vocabulary_size), out_dim);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  t.row(0).setZero();
  return {Modality::text, round_to_float(t)};
}

MatrixXd FrozenEncoder::encode_patches(const PatchGrid& grid) const {
  if (modality != Modality::image) throw std::logic_error("encode_patches: not an image encoder");
  if (grid.flat_dim() != weights.rows())
    throw ShapeError("encode_patches: patch dim " + std::to_string(grid.flat_dim()) + " vs encoder " +
                     shape_str(weights));
  return grid.patches * weights;
}

MatrixXd FrozenEncoder::lookup(const std::vector<std::size_t>& ids) const {
  if (modality != Modality::text) throw std::logic_error("lookup: not a text encoder");
  MatrixXd out(static_cast<Index>(ids.size()), weights.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= static_cast<std::size_t>(weights.rows()))
      throw std::out_of_range("lookup: token id " + std::to_string(ids[k]) + " outside the vocabulary");
    out.row(static_cast<Index>(k)) = weights.row(static_cast<Index>(ids[k]));
  }
  return out;
}

TranslationPaths TranslationPaths::of(Modality m) {
  const std::string p = modality_name(m);
  return {p + "/proj/weight", p + "/proj/bias", p + "/cls", p + "/pos", "frozen/" + p + "_encoder"};
}

void init_translation_params(ParamStore& params, const TokenizerConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto img = FrozenEncoder::image(cfg.flat_dim(), cfg.image_enc_dim, cfg.encoder_seed);
  const auto txt = FrozenEncoder::text(synth::Vocabulary::standard().size(), cfg.text_enc_dim,
                                       synth::mix_seed(cfg.encoder_seed, 1));
  params.add("frozen/image_encoder", img.weights, {img.weights.rows(), img.weights.cols()}, false, false);
  params.add("frozen/text_encoder", txt.weights, {txt.weights.rows(), txt.weights.cols()}, false, false);

  const Index D = cfg.model_dim;
  for (Modality m : {Modality::image, Modality::text}) {
    const auto paths = TranslationPaths::of(m);
    const Index in = m == Modality::image ? cfg.image_enc_dim : cfg.text_enc_dim;
    params.add(paths.proj_weight, rng.truncated_normal_matrix(in, D, 0.02), {in, D});
    params.add_vector(paths.proj_bias, RowVectorXd::Zero(D));
    params.add(paths.cls, rng.truncated_normal_matrix(1, D, 0.02), {1, D}, true, false);
    params.add(paths.pos, rng.truncated_normal_matrix(cfg.tokens(), D, 0.02), {cfg.tokens(), D}, true, false);
  }
}

MatrixXd encode_image(const synth::PersonImage& img, const TokenizerConfig& cfg, const ParamStore& params) {
  if (img.height() != cfg.image_height || img.width() != cfg.image_width)
    throw ShapeError("encode_image: expected " + std::to_string(cfg.image_height) + "x" +
                     std::to_string(cfg.image_width) + " image, got " + std::to_string(img.height()) + "x" +
                     std::to_string(img.width()));
  FrozenEncoder enc{Modality::image, params.value("frozen/image_encoder")};
  return enc.encode_patches(split_patches(img, cfg.patch_h, cfg.patch_w));
}

std::vector<std::size_t> caption_ids(const synth::Caption& cap, const TokenizerConfig& cfg) {
  const auto N = static_cast<std::size_t>(cfg.num_patches());
  if (cap.tokens.size() > N)
    throw std::invalid_argument("caption has " + std::to_string(cap.tokens.size()) + " words but only " +
                                std::to_string(N) + " token slots");
  const auto& vocab = synth::Vocabulary::standard();
  std::vector<std::size_t> ids(N, 0);
  for (std::size_t k = 0; k < cap.tokens.size(); ++k) ids[k] = vocab.id(cap.tokens[k]);
  return ids;
}

MatrixXd encode_caption(const synth::Caption& cap, const TokenizerConfig& cfg, const ParamStore& params) {
  FrozenEncoder enc{Modality::text, params.value("frozen/text_encoder")};
  return enc.lookup(caption_ids(cap, cfg));
}

MatrixXd translate(Modality m, const MatrixXd& encoded, Index batch, const ParamStore& params) {
  const auto paths = TranslationPaths::of(m);
  const MatrixXd& pos = params.value(paths.pos);
  const Index T = pos.rows(), N = T - 1, D = pos.cols();
  if (batch <= 0 || encoded.rows() != batch * N)
    throw ShapeError(std::string("translate(") + modality_name(m) + "): encoded block " + shape_str(encoded) +
                     " does not hold " + std::to_string(batch) + " sequences of " + std::to_string(N) + " tokens");
  const MatrixXd content = linear(encoded, params.value(paths.proj_weight), RowVectorXd(params.value(paths.proj_bias)));
  const RowVectorXd cls = params.value(paths.cls);
  MatrixXd out(batch * T, D);
  for (Index b = 0; b < batch; ++b) {
    out.row(b * T) = cls + pos.row(0);
    out.middleRows(b * T + 1, N) = content.middleRows(b * N, N) + pos.bottomRows(N);
  }
  return out;
}

void translate_backward(Modality m, const MatrixXd& encoded, Index batch, const MatrixXd& d_out, ParamStore& params) {
  const auto paths = TranslationPaths::of(m);
  ParamEntry& pos = params.at(paths.pos);
  ParamEntry& cls = params.at(paths.cls);
  ParamEntry& w = params.at(paths.proj_weight);
  ParamEntry& bias = params.at(paths.proj_bias);
  const Index T = pos.value.rows(), N = T - 1;
  MatrixXd d_content(batch * N, pos.value.cols());
  for (Index b = 0; b < batch; ++b) {
    pos.grad += d_out.middleRows(b * T, T);
    cls.grad += d_out.row(b * T);
    d_content.middleRows(b * N, N) = d_out.middleRows(b * T + 1, N);
  }
  w.grad.noalias() += encoded.transpose() * d_content;
  bias.grad += d_content.colwise().sum();
}

FusedSequence image_translate(const synth::PersonImage& img, const TokenizerConfig& cfg, const ParamStore& params) {
  return {translate(Modality::image, encode_image(img, cfg, params), 1, params), Modality::image, img.identity_id};
}

FusedSequence text_translate(const synth::Caption& cap, const TokenizerConfig& cfg, const ParamStore& params) {
  return {translate(Modality::text, encode_caption(cap, cfg, params), 1, params), Modality::text, cap.identity_id};
}

}  // namespace dmf::fusion
