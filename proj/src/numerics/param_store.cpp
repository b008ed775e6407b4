#include "dmf/numerics/param_store.hpp"

namespace dmf {

ParamEntry& ParamStore::add(const std::string& path, MatrixXd value, std::vector<Index> shape, bool trainable,
                            bool decay) {
  if (entries_.count(path)) throw std::invalid_argument("ParamStore: duplicate path '" + path + "'");
  Index n = 1;
  for (Index e : shape) n *= e;
  const bool matrix_mismatch = shape.size() == 2 && (shape[0] != value.rows() || shape[1] != value.cols());
  if (n != value.size() || matrix_mismatch)
    throw ShapeError("ParamStore: '" + path + "' declared " + shape_str(shape) + " but holds " + shape_str(value));
  ParamEntry e;
  e.grad = MatrixXd::Zero(value.rows(), value.cols());
  e.velocity = MatrixXd::Zero(value.rows(), value.cols());
  e.value = std::move(value);
  e.shape = std::move(shape);
  e.trainable = trainable;
  e.decay = decay;
  return entries_.emplace(path, std::move(e)).first->second;
}

ParamEntry& ParamStore::add_vector(const std::string& path, const RowVectorXd& value, bool trainable, bool decay) {
  return add(path, MatrixXd(value), {value.size()}, trainable, decay);
}

ParamEntry& ParamStore::at(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no parameter '" + path + "'");
  return it->second;
}

const ParamEntry& ParamStore::at(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no parameter '" + path + "'");
  return it->second;
}

void ParamStore::erase(const std::string& path) { entries_.erase(path); }

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.grad.setZero();
}

void ParamStore::set_trainable_prefix(const std::string& prefix, bool trainable) {
  for (auto& [path, e] : entries_)
    if (path.compare(0, prefix.size(), prefix) == 0) e.trainable = trainable;
}

std::vector<std::string> ParamStore::paths() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [path, _] : entries_) out.push_back(path);
  return out;
}

Index ParamStore::scalar_count() const {
  Index n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

}  // namespace dmf
