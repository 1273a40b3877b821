#include "bdg/rsu.hpp"

#include "bdg/ops.hpp"

namespace bdg::rsu {

void RsuConfig::validate() const {
  if (l < 4 || l > 7) throw ShapeError("RSU height must be in [4, 7], got " + std::to_string(l));
  if (c_in < 1 || m < 1 || c_out < 1) throw ShapeError("RSU channel counts must be >= 1 in " + str());
}

std::string RsuConfig::str() const {
  return "RSU-" + std::to_string(l) + "(" + std::to_string(c_in) + "," + std::to_string(m) + "," +
         std::to_string(c_out) + ")";
}

template <typename T>
void RsuBlock<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  entry.visit(prefix + ".entry", v);
  for (std::size_t k = 0; k < encoder.size(); ++k) encoder[k].visit(prefix + ".enc" + std::to_string(k + 1), v);
  bottom.visit(prefix + ".bottom", v);
  for (std::size_t k = decoder.size(); k-- > 0;) decoder[k].visit(prefix + ".dec" + std::to_string(k + 1), v);
}

template <typename T>
RsuBlock<T> build_rsu(const RsuConfig& cfg) {
  cfg.validate();
  using Unit = nn::ConvBnRelu<T>;
  RsuBlock<T> b;
  b.cfg = cfg;
  b.entry = Unit::make(cfg.c_in, cfg.c_out);
  b.encoder.push_back(Unit::make(cfg.c_out, cfg.m));
  for (int k = 2; k <= cfg.l - 1; ++k) b.encoder.push_back(Unit::make(cfg.m, cfg.m));
  b.bottom = Unit::make(cfg.m, cfg.m, 3, 1, 2);
  b.decoder.push_back(Unit::make(2 * cfg.m, cfg.c_out));
  for (int k = 2; k <= cfg.l - 1; ++k) b.decoder.push_back(Unit::make(2 * cfg.m, cfg.m));
  return b;
}

template <typename T>
Tensor<T> rsu_forward(RsuBlock<T>& block, const Tensor<T>& x, Mode mode, PoolPolicy policy, RsuTrace* trace) {
  const RsuConfig& cfg = block.cfg;
  const Shape& s = x.shape();
  if (s.c != cfg.c_in) {
    throw ShapeError(cfg.str() + ": input has " + std::to_string(s.c) + " channels");
  }
  if (policy == PoolPolicy::kStrict && (s.h % cfg.divisor() != 0 || s.w % cfg.divisor() != 0)) {
    throw ShapeError(cfg.str() + ": spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " must be divisible by " + std::to_string(cfg.divisor()));
  }
  const int l = cfg.l;
  const Tensor<T> hx_in = block.entry.forward(x, mode);

  // enc[k-1] is encoder stage k; pooled[k-1] tells whether stage k ran on a pooled map.
  std::vector<Tensor<T>> enc;
  std::vector<bool> pooled(static_cast<std::size_t>(l), false);
  enc.push_back(block.encoder[0].forward(hx_in, mode));
  for (int k = 2; k <= l - 1; ++k) {
    Tensor<T> prev = enc.back();
    const Shape& ps = prev.shape();
    if (ps.h % 2 == 0 && ps.w % 2 == 0) {
      prev = nn::maxpool2(prev);
      pooled[k - 1] = true;
    }
    enc.push_back(block.encoder[k - 1].forward(prev, mode));
  }
  Tensor<T> d = block.bottom.forward(enc.back(), mode);

  if (trace != nullptr) {
    trace->encoder.clear();
    trace->decoder_inputs.assign(static_cast<std::size_t>(l - 1), Shape{});
    trace->pools = 0;
    for (const auto& e : enc) trace->encoder.push_back(e.shape());
    for (bool p : pooled) trace->pools += p ? 1 : 0;
  }

  for (int k = l - 1; k >= 1; --k) {
    // Stage k+1 ran on a pooled copy of stage k's output: bring its result back up.
    if (k < l - 1 && pooled[k]) d = nn::upsample_bilinear2(d);
    const Tensor<T> cat = concat_channels<T>({d, enc[k - 1]});
    if (trace != nullptr) trace->decoder_inputs[k - 1] = cat.shape();
    d = block.decoder[k - 1].forward(cat, mode);
  }
  return add(d, hx_in);
}

template struct RsuBlock<float>;
template struct RsuBlock<double>;
template RsuBlock<float> build_rsu<float>(const RsuConfig&);
template RsuBlock<double> build_rsu<double>(const RsuConfig&);
template Tensor<float> rsu_forward<float>(RsuBlock<float>&, const Tensor<float>&, Mode, PoolPolicy, RsuTrace*);
template Tensor<double> rsu_forward<double>(RsuBlock<double>&, const Tensor<double>&, Mode, PoolPolicy, RsuTrace*);

}  // namespace bdg::rsu
