#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "shift/rng.hpp"

namespace shift::nn {

using Matrix = Eigen::MatrixXd;

/// One named trainable (or frozen) tensor. Gradient storage lives alongside
/// the value so optimizers can walk a ParamSet without auxiliary maps.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  ParamTensor(std::string n, Matrix v, bool train = true)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Matrix::Zero(value.rows(), value.cols())),
        trainable(train) {}

  void zero_grad() { grad.setZero(); }
};

/// Ordered, name-addressed collection of tensors. Iteration order is the
/// insertion order, which init code keeps deterministic.
class ParamSet {
 public:
  ParamTensor& add(const std::string& name, Matrix value, bool trainable = true);
  ParamTensor& at(const std::string& name);
  const ParamTensor& at(const std::string& name) const;
  ParamTensor* find(const std::string& name);
  const ParamTensor* find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<std::unique_ptr<ParamTensor>>& tensors() { return tensors_; }
  const std::vector<std::unique_ptr<ParamTensor>>& tensors() const { return tensors_; }

  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count(bool trainable_only = false) const;

  void zero_grads();

  /// Serialization: little-endian binary blob with a JSON shape header.
  /// Layout is documented in docs/checkpoint_format.md.
  void save(const std::string& path) const;
  static ParamSet load(const std::string& path);

 private:
  std::vector<std::unique_ptr<ParamTensor>> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Glorot-uniform fill keyed by (seed, tensor name) so a tensor's init is
/// independent of the order other tensors were created in.
Matrix glorot_init(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                   const std::string& name);

}  // namespace shift::nn
