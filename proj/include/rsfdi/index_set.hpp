#pragma once

#include <set>
#include <string>
#include <vector>

namespace rsfdi {

// Subset of the integers k >= k_min described by an explicit listing below
// a threshold and an all-or-nothing tail from the threshold on.  Covers
// ALL, {k >= k0}, finite and cofinite sets and is closed under the set
// operations.
class IndexSet {
 public:
  enum class Kind { Empty, All, AtLeast, Finite, Cofinite };

  IndexSet() = default;

  static IndexSet none(int k_min = 1);
  static IndexSet all(int k_min = 1);
  static IndexSet at_least(int k0, int k_min = 1);
  static IndexSet finite(const std::set<int>& ks, int k_min = 1);
  static IndexSet cofinite(const std::set<int>& missing, int k_min = 1);

  bool contains(int k) const;
  bool empty() const;
  bool tail() const { return tail_; }
  int threshold() const { return threshold_; }
  int k_min() const { return k_min_; }
  Kind kind() const;

  IndexSet unite(const IndexSet& o) const;
  IndexSet intersect(const IndexSet& o) const;
  IndexSet complement() const;
  IndexSet minus(const IndexSet& o) const { return intersect(o.complement()); }
  bool subset_of(const IndexSet& o) const;
  bool operator==(const IndexSet& o) const;

  // Members k with k_min <= k <= upto.
  std::vector<int> elements_upto(int upto) const;
  std::string describe() const;

 private:
  IndexSet lifted(int threshold) const;
  void normalize();

  int k_min_ = 1;
  int threshold_ = 1;
  bool tail_ = false;
  std::set<int> below_;
};

const char* to_string(IndexSet::Kind kind);

}  // namespace rsfdi
