#include <algorithm>
#include <filesystem>
#include <mutex>

#include <spdlog/spdlog.h>

#include "dpguard/error.hpp"
#include "dpguard/harvester.hpp"
#include "dpguard/parallel.hpp"

namespace dpguard::harvester {

namespace fs = std::filesystem;

namespace {

void check_threshold(double t) {
  if (!(t > 0.0 && t <= 1.0)) throw Error(ErrorKind::kValidation, "similarity threshold must lie in (0, 1]");
}

bool name_less(const SignedImage& a, const SignedImage& b) {
  const auto fa = fs::path(a.name).filename().string();
  const auto fb = fs::path(b.name).filename().string();
  return fa != fb ? fa < fb : a.name < b.name;
}

DedupResult dedup_one(std::vector<SignedImage> images, double threshold) {
  std::sort(images.begin(), images.end(), name_less);
  DedupResult r;
  std::vector<const SignedImage*> kept;
  for (const auto& img : images) {
    const SignedImage* match = nullptr;
    double best = -1.0;
    for (const auto* k : kept) {
      const double s = perceptual_similarity(img.signature, k->signature);
      if (s >= threshold && s > best) {
        best = s;
        match = k;
      }
    }
    if (match) {
      r.removed.push_back({img.name, match->name, best});
    } else {
      kept.push_back(&img);
      r.kept.push_back(img.name);
    }
  }
  return r;
}

std::vector<SignedImage> sign_files(const std::vector<std::string>& files, std::vector<std::string>& warnings) {
  std::vector<SignedImage> out;
  for (const auto& f : files) {
    try {
      out.push_back({f, dhash_file(f)});
    } catch (const Error& e) {
      spdlog::warn("dedup: skipping {}: {}", f, e.what());
      warnings.push_back(f + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

DedupResult dedup_intra_group(const std::map<std::string, std::vector<SignedImage>>& groups, double threshold,
                              std::size_t workers) {
  check_threshold(threshold);
  std::vector<const std::vector<SignedImage>*> ordered;
  for (const auto& [name, images] : groups) ordered.push_back(&images);
  std::vector<DedupResult> parts(ordered.size());
  parallel_for(ordered.size(), workers, [&](std::size_t i) { parts[i] = dedup_one(*ordered[i], threshold); });
  DedupResult all;
  for (auto& p : parts) {
    all.kept.insert(all.kept.end(), p.kept.begin(), p.kept.end());
    all.removed.insert(all.removed.end(), p.removed.begin(), p.removed.end());
  }
  return all;
}

DedupResult dedup_intra_group_files(const std::map<std::string, std::vector<std::string>>& groups, double threshold,
                                    std::size_t workers) {
  check_threshold(threshold);
  std::vector<std::string> warnings;
  std::map<std::string, std::vector<SignedImage>> signed_groups;
  for (const auto& [name, files] : groups) signed_groups[name] = sign_files(files, warnings);
  DedupResult r = dedup_intra_group(signed_groups, threshold, workers);
  r.warnings = std::move(warnings);
  return r;
}

DedupResult remove_common(const std::vector<SignedImage>& images, const std::vector<SignedImage>& gallery,
                          double threshold) {
  check_threshold(threshold);
  if (gallery.empty()) throw Error(ErrorKind::kValidation, "reference gallery is empty");
  DedupResult r;
  for (const auto& img : images) {
    const SignedImage* match = nullptr;
    double best = -1.0;
    for (const auto& g : gallery) {
      const double s = perceptual_similarity(img.signature, g.signature);
      if (s >= threshold && s > best) {
        best = s;
        match = &g;
      }
    }
    if (match) {
      r.removed.push_back({img.name, match->name, best});
    } else {
      r.kept.push_back(img.name);
    }
  }
  return r;
}

DedupResult remove_common_files(const std::vector<std::string>& images, const std::vector<std::string>& gallery,
                                double threshold) {
  std::vector<std::string> warnings;
  const auto signed_images = sign_files(images, warnings);
  const auto signed_gallery = sign_files(gallery, warnings);
  DedupResult r = remove_common(signed_images, signed_gallery, threshold);
  r.warnings = std::move(warnings);
  return r;
}

std::vector<SweepRow> threshold_sweep(const std::map<std::string, std::vector<SignedImage>>& groups,
                                      const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw Error(ErrorKind::kValidation, "threshold sweep needs at least one threshold");
  std::vector<SweepRow> rows;
  for (double t : thresholds) rows.push_back({t, dedup_intra_group(groups, t).kept.size()});
  return rows;
}

SweepRow closest_to_ground_truth(const std::vector<SweepRow>& sweep, std::size_t ground_truth) {
  if (sweep.empty()) throw Error(ErrorKind::kValidation, "empty threshold sweep");
  const auto gap = [&](const SweepRow& r) {
    return r.kept > ground_truth ? r.kept - ground_truth : ground_truth - r.kept;
  };
  const SweepRow* best = &sweep.front();
  for (const auto& r : sweep) {
    if (gap(r) < gap(*best)) best = &r;
  }
  return *best;
}

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::vector<std::string> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::kIo, "not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::map<std::string, std::vector<std::string>> image_groups(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::kIo, "not a directory: " + dir);
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) {
      auto files = list_images(e.path().string());
      if (!files.empty()) groups[e.path().filename().string()] = std::move(files);
    } else if (e.is_regular_file() && is_image_file(e.path())) {
      groups[""].push_back(e.path().string());
    }
  }
  if (groups.count("")) std::sort(groups[""].begin(), groups[""].end());
  return groups;
}

}  // namespace dpguard::harvester
