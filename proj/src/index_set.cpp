#include "rsfdi/index_set.hpp"

#include <algorithm>
#include <sstream>

namespace rsfdi {

IndexSet IndexSet::none(int k_min) {
  IndexSet s;
  s.k_min_ = k_min;
  s.threshold_ = k_min;
  s.tail_ = false;
  return s;
}

IndexSet IndexSet::all(int k_min) {
  IndexSet s = none(k_min);
  s.tail_ = true;
  return s;
}

IndexSet IndexSet::at_least(int k0, int k_min) {
  IndexSet s = none(k_min);
  s.threshold_ = std::max(k0, k_min);
  s.tail_ = true;
  s.normalize();
  return s;
}

IndexSet IndexSet::finite(const std::set<int>& ks, int k_min) {
  IndexSet s = none(k_min);
  int top = k_min;
  for (int k : ks) {
    if (k < k_min) continue;
    s.below_.insert(k);
    top = std::max(top, k + 1);
  }
  s.threshold_ = top;
  s.normalize();
  return s;
}

IndexSet IndexSet::cofinite(const std::set<int>& missing, int k_min) {
  return finite(missing, k_min).complement();
}

bool IndexSet::contains(int k) const {
  if (k < k_min_) return false;
  if (k >= threshold_) return tail_;
  return below_.count(k) > 0;
}

bool IndexSet::empty() const { return !tail_ && below_.empty(); }

IndexSet::Kind IndexSet::kind() const {
  if (empty()) return Kind::Empty;
  if (!tail_) return Kind::Finite;
  if (below_.empty()) return threshold_ == k_min_ ? Kind::All : Kind::AtLeast;
  // tail plus a listing: contiguous listing that reaches the threshold is
  // just an AtLeast set with a lower start
  int gaps = (threshold_ - k_min_) - static_cast<int>(below_.size());
  if (gaps == 0) return Kind::All;
  int start = threshold_;
  while (below_.count(start - 1)) --start;
  int listed_before_run = 0;
  for (int k : below_)
    if (k < start) ++listed_before_run;
  if (listed_before_run == 0) return start == k_min_ ? Kind::All : Kind::AtLeast;
  return Kind::Cofinite;
}

IndexSet IndexSet::lifted(int threshold) const {
  IndexSet s = *this;
  if (threshold <= threshold_) return s;
  if (tail_)
    for (int k = threshold_; k < threshold; ++k) s.below_.insert(k);
  s.threshold_ = threshold;
  return s;
}

void IndexSet::normalize() {
  // pull the threshold down while the listing agrees with the tail
  while (threshold_ > k_min_) {
    bool listed = below_.count(threshold_ - 1) > 0;
    if (listed != tail_) break;
    below_.erase(threshold_ - 1);
    --threshold_;
  }
  if (threshold_ < k_min_) threshold_ = k_min_;
}

IndexSet IndexSet::unite(const IndexSet& o) const {
  int t = std::max(threshold_, o.threshold_);
  IndexSet a = lifted(t), b = o.lifted(t);
  a.k_min_ = std::min(k_min_, o.k_min_);
  a.below_.insert(b.below_.begin(), b.below_.end());
  a.tail_ = a.tail_ || b.tail_;
  a.normalize();
  return a;
}

IndexSet IndexSet::intersect(const IndexSet& o) const {
  int t = std::max(threshold_, o.threshold_);
  IndexSet a = lifted(t), b = o.lifted(t);
  IndexSet r = none(std::max(k_min_, o.k_min_));
  r.threshold_ = t;
  for (int k : a.below_)
    if (b.below_.count(k) && k >= r.k_min_) r.below_.insert(k);
  r.tail_ = a.tail_ && b.tail_;
  r.normalize();
  return r;
}

IndexSet IndexSet::complement() const {
  IndexSet r = none(k_min_);
  r.threshold_ = threshold_;
  for (int k = k_min_; k < threshold_; ++k)
    if (!below_.count(k)) r.below_.insert(k);
  r.tail_ = !tail_;
  r.normalize();
  return r;
}

bool IndexSet::subset_of(const IndexSet& o) const {
  return minus(o).empty();
}

bool IndexSet::operator==(const IndexSet& o) const {
  return subset_of(o) && o.subset_of(*this);
}

std::vector<int> IndexSet::elements_upto(int upto) const {
  std::vector<int> out;
  for (int k = k_min_; k <= upto; ++k)
    if (contains(k)) out.push_back(k);
  return out;
}

std::string IndexSet::describe() const {
  std::ostringstream os;
  switch (kind()) {
    case Kind::Empty: return "{}";
    case Kind::All: return "ALL";
    case Kind::AtLeast: {
      int start = threshold_;
      while (below_.count(start - 1)) --start;
      os << "k>=" << start;
      return os.str();
    }
    case Kind::Finite:
    case Kind::Cofinite: break;
  }
  if (kind() == Kind::Cofinite) {
    os << "ALL\\{";
    bool first = true;
    for (int k = k_min_; k < threshold_; ++k)
      if (!below_.count(k)) {
        os << (first ? "" : ",") << k;
        first = false;
      }
    os << "}";
    return os.str();
  }
  os << "{";
  bool first = true;
  for (int k : below_) {
    os << (first ? "" : ",") << k;
    first = false;
  }
  os << "}";
  return os.str();
}

const char* to_string(IndexSet::Kind kind) {
  switch (kind) {
    case IndexSet::Kind::Empty: return "EMPTY";
    case IndexSet::Kind::All: return "ALL";
    case IndexSet::Kind::AtLeast: return "AT_LEAST";
    case IndexSet::Kind::Finite: return "FINITE";
    case IndexSet::Kind::Cofinite: return "COFINITE";
  }
  return "?";
}

}  // namespace rsfdi
