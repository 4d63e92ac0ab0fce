#pragma once

// Test fixtures: a minimal PNG writer for screenshot stubs, a scratch
// directory helper, and a deterministic fixture corpus generator.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "lookback/lookback.hpp"

namespace fixtures {

// --- real PNG bytes of arbitrary dimensions (grayscale, stored deflate) --------

inline std::uint32_t crc32_of(const std::string& data, std::uint32_t crc = 0) {
  static std::uint32_t table[256];
  static bool ready = false;
  if (!ready) {
    for (std::uint32_t n = 0; n < 256; ++n) {
      std::uint32_t c = n;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[n] = c;
    }
    ready = true;
  }
  crc ^= 0xFFFFFFFFu;
  for (unsigned char ch : data) crc = table[(crc ^ ch) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t adler32_of(const std::string& data) {
  std::uint32_t a = 1, b = 0;
  for (unsigned char ch : data) {
    a = (a + ch) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

inline void push_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

inline void push_chunk(std::string& out, const char* type, const std::string& payload) {
  push_be32(out, static_cast<std::uint32_t>(payload.size()));
  std::string body = std::string(type) + payload;
  out += body;
  push_be32(out, crc32_of(body));
}

/// Valid 8-bit grayscale PNG of the given dimensions filled with `shade`,
/// compressed as zlib stored blocks.
inline std::string png_bytes(int width, int height, unsigned char shade = 0x80) {
  std::string raw;
  raw.reserve(static_cast<std::size_t>(height) * (width + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(static_cast<std::size_t>(width), static_cast<char>(shade));
  }

  std::string z;
  z.push_back(0x78);
  z.push_back(0x01);
  std::size_t pos = 0;
  do {
    std::size_t len = std::min<std::size_t>(raw.size() - pos, 65535);
    bool final = pos + len >= raw.size();
    z.push_back(final ? 0x01 : 0x00);
    z.push_back(static_cast<char>(len & 0xFF));
    z.push_back(static_cast<char>((len >> 8) & 0xFF));
    z.push_back(static_cast<char>(~len & 0xFF));
    z.push_back(static_cast<char>((~len >> 8) & 0xFF));
    z.append(raw, pos, len);
    pos += len;
  } while (pos < raw.size());
  push_be32(z, adler32_of(raw));

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  push_be32(ihdr, static_cast<std::uint32_t>(width));
  push_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  push_chunk(png, "IHDR", ihdr);
  push_chunk(png, "IDAT", z);
  push_chunk(png, "IEND", "");
  return png;
}

inline std::string write_png(const std::filesystem::path& path, int width, int height,
                             unsigned char shade = 0x80) {
  lookback::write_file_bytes(path, png_bytes(width, height, shade));
  return path.string();
}

// --- scratch directories ---------------------------------------------------------

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    dir_ = std::filesystem::temp_directory_path() /
           ("lookback_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(dir_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path file(const std::string& name) const { return dir_ / name; }

 private:
  std::filesystem::path dir_;
};

// --- fixture corpus -------------------------------------------------------------

struct CorpusSpec {
  std::size_t trajectories = 4;
  std::size_t steps_each = 5;
  int width = 320;
  int height = 640;
  std::uint64_t seed = 17;
  bool with_bboxes = true;
};

/// Deterministic synthetic corpus with real PNG screenshots on disk. Actions
/// cycle through the mobile vocabulary; every click-like action gets a bbox
/// centered on its target when bboxes are enabled.
inline std::vector<lookback::Trajectory> make_corpus(const std::filesystem::path& dir,
                                                     const CorpusSpec& spec = {}) {
  using namespace lookback;
  std::filesystem::create_directories(dir / "imgs");
  std::mt19937_64 rng(spec.seed);
  std::vector<Trajectory> out;
  for (std::size_t t = 0; t < spec.trajectories; ++t) {
    Trajectory traj;
    traj.id = "fx" + std::to_string(t);
    traj.goal = Goal{"Complete scripted task number " + std::to_string(t)};
    traj.platform = Platform::mobile;
    for (std::size_t o = 0; o <= spec.steps_each; ++o) {
      Observation obs;
      obs.step_index = static_cast<std::int64_t>(o);
      auto shade = static_cast<unsigned char>(rng_below(rng, 200) + 20);
      obs.image_ref =
          write_png(dir / "imgs" / (traj.id + "_" + std::to_string(o) + ".png"), spec.width,
                    spec.height, shade);
      obs.width_px = spec.width;
      obs.height_px = spec.height;
      traj.observations.push_back(std::move(obs));
    }
    for (std::size_t s = 0; s < spec.steps_each; ++s) {
      // keep coordinates on the canonical 1e-4 wire grid so serialized and
      // in-memory actions compare equal
      double cx = std::round((0.1 + 0.8 * rng_unit(rng)) * 10000.0) / 10000.0;
      double cy = std::round((0.1 + 0.8 * rng_unit(rng)) * 10000.0) / 10000.0;
      switch (s % 4) {
        case 0:
          traj.actions.push_back(Click{{cx, cy}});
          break;
        case 1:
          traj.actions.push_back(TypeText{"query " + std::to_string(s)});
          break;
        case 2:
          traj.actions.push_back(Scroll{ScrollDirection::down, std::nullopt});
          break;
        default:
          traj.actions.push_back(PressBack{});
          break;
      }
      if (spec.with_bboxes) {
        if (traj.actions.back().is_point_action()) {
          traj.gt_bboxes.push_back(BBox{cx - 0.05, cy - 0.05, cx + 0.05, cy + 0.05});
        } else {
          traj.gt_bboxes.push_back(std::nullopt);
        }
      }
    }
    traj.check();
    out.push_back(std::move(traj));
  }
  return out;
}

/// Fills the cache with deterministic synthetic summaries, no backend needed.
inline void fill_memory_cache(lookback::MemoryCache& cache,
                              const std::vector<lookback::Trajectory>& corpus) {
  using namespace lookback;
  for (const auto& traj : corpus) {
    for (std::size_t s = 0; s < traj.step_count(); ++s) {
      MemoryEntry e;
      e.step = static_cast<std::int64_t>(s);
      e.observation_caption =
          "Screen " + std::to_string(s) + " of " + traj.id + " shows the scripted list view.";
      e.action_description = describe_action(traj.actions[s]);
      e.action_outcome = "The action completed and the next screen loaded.";
      cache.put(traj.id, std::move(e));
    }
  }
}

inline lookback::Observation make_obs(std::int64_t step, const std::string& ref, int w = 320,
                                      int h = 640) {
  return lookback::Observation{step, ref, w, h};
}

} // namespace fixtures
