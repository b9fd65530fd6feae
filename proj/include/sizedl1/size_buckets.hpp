#pragma once

namespace sizedl1::cocoeval {

/// COCO object-size convention: small (area < 32^2), medium (32^2..96^2),
/// large (> 96^2), areas in pixel^2. Boundary areas go to the lower bucket.
enum class SizeBucket { small, medium, large, all };

inline constexpr double kSmallMaxArea = 32.0 * 32.0;    // 1024
inline constexpr double kMediumMaxArea = 96.0 * 96.0;   // 9216

inline SizeBucket bucket_of(double area) {
  if (area <= kSmallMaxArea) return SizeBucket::small;
  if (area <= kMediumMaxArea) return SizeBucket::medium;
  return SizeBucket::large;
}

inline bool in_bucket(SizeBucket bucket, double area) {
  return bucket == SizeBucket::all || bucket_of(area) == bucket;
}

inline const char* bucket_name(SizeBucket bucket) {
  switch (bucket) {
    case SizeBucket::small: return "small";
    case SizeBucket::medium: return "medium";
    case SizeBucket::large: return "large";
    case SizeBucket::all: return "all";
  }
  return "?";
}

}  // namespace sizedl1::cocoeval
