#pragma once

#include "dmf/numerics/dense.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dmf {

/// One learnable (or frozen) array with its optimizer state.
struct ParamEntry {
  MatrixXd value;
  MatrixXd grad;
  MatrixXd velocity;
  /// Logical extents; a bias of length n is stored as a 1 x n matrix with shape {n}.
  std::vector<Index> shape;
  bool trainable = true;
  /// Coupled L2 weight decay applies only when set.
  bool decay = true;
};

/// Ordered mapping canonical path -> parameter. Iteration is lexicographic by
/// path, which fixes the order of every reduction over parameters.
class ParamStore {
 public:
  ParamEntry& add(const std::string& path, MatrixXd value, std::vector<Index> shape, bool trainable = true,
                  bool decay = true);
  ParamEntry& add_vector(const std::string& path, const RowVectorXd& value, bool trainable = true,
                         bool decay = false);

  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  ParamEntry& at(const std::string& path);
  const ParamEntry& at(const std::string& path) const;
  MatrixXd& value(const std::string& path) { return at(path).value; }
  const MatrixXd& value(const std::string& path) const { return at(path).value; }
  MatrixXd& grad(const std::string& path) { return at(path).grad; }

  void erase(const std::string& path);
  void zero_grad();
  void set_trainable_prefix(const std::string& prefix, bool trainable);

  std::vector<std::string> paths() const;
  std::size_t size() const { return entries_.size(); }
  Index scalar_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, ParamEntry> entries_;
};

}  // namespace dmf
