#include "avrm/records.hpp"

#include <cmath>

#include "avrm/errors.hpp"

namespace avrm {

int anchor_class(int a1, int a2) {
  if ((a1 != 0 && a1 != 1) || (a2 != 0 && a2 != 1)) {
    throw DataError("anchor bits must be 0 or 1");
  }
  if (a2 > a1) throw DataError("invalid anchor pair (0,1): requires a2 <= a1");
  return a1 + a2;
}

int anchor_class(const AnchorRecord& rec) { return anchor_class(rec.a1, rec.a2); }

void set_anchor_class(AnchorRecord& rec, int cls) {
  if (cls < 0 || cls > 2) throw DataError("anchor class must be 0, 1 or 2");
  rec.a1 = cls >= 1 ? 1 : 0;
  rec.a2 = cls == 2 ? 1 : 0;
}

void validate_thresholds(const Thresholds& t) {
  if (!std::isfinite(t.tau1) || !std::isfinite(t.tau2) || !(t.tau1 < t.tau2)) {
    throw DomainError("thresholds require finite tau1 < tau2");
  }
}

}  // namespace avrm
