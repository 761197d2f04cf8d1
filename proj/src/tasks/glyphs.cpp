#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "metaplast/errors.hpp"
#include "metaplast/tasks.hpp"

namespace metaplast::tasks {

namespace {

struct Pt {
  double x, y;
};

using Stroke = std::array<Pt, 3>;  // quadratic Bezier control points, unit square

std::vector<Stroke> make_prototype(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_strokes(2, 4);
  std::uniform_real_distribution<double> u(0.15, 0.85);
  std::vector<Stroke> strokes(static_cast<std::size_t>(n_strokes(rng)));
  for (auto& s : strokes) {
    for (auto& p : s) p = {u(rng), u(rng)};
  }
  // chain roughly half of the strokes to the previous one, as pen strokes often do
  std::bernoulli_distribution chain(0.5);
  for (std::size_t i = 1; i < strokes.size(); ++i) {
    if (chain(rng)) strokes[i][0] = strokes[i - 1][2];
  }
  return strokes;
}

void stamp(std::vector<double>& ink, std::size_t size, double cx, double cy, double radius) {
  const auto lo_x = static_cast<long>(std::floor(cx - radius - 1)), hi_x = static_cast<long>(std::ceil(cx + radius + 1));
  const auto lo_y = static_cast<long>(std::floor(cy - radius - 1)), hi_y = static_cast<long>(std::ceil(cy + radius + 1));
  const long n = static_cast<long>(size);
  for (long y = std::max(lo_y, 0L); y <= std::min(hi_y, n - 1); ++y) {
    for (long x = std::max(lo_x, 0L); x <= std::min(hi_x, n - 1); ++x) {
      const double d = std::hypot(static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy);
      const double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      double& v = ink[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)];
      v = std::max(v, cover);
    }
  }
}

std::vector<std::uint8_t> render_sample(const std::vector<Stroke>& proto, std::size_t size, std::mt19937_64& rng) {
  std::normal_distribution<double> jitter(0.0, 0.03);
  std::normal_distribution<double> angle(0.0, 0.08);
  std::uniform_real_distribution<double> scale(0.9, 1.1);
  std::uniform_real_distribution<double> width(0.022, 0.036);
  const double th = angle(rng), sc = scale(rng), tx = jitter(rng), ty = jitter(rng);
  const double radius = 0.5 * width(rng) * static_cast<double>(size);
  const double ct = std::cos(th), st = std::sin(th);
  auto place = [&](Pt p) {
    const double x = p.x - 0.5, y = p.y - 0.5;
    return Pt{0.5 + sc * (ct * x - st * y) + tx, 0.5 + sc * (st * x + ct * y) + ty};
  };
  std::vector<double> ink(size * size, 0.0);
  for (const auto& s : proto) {
    Stroke q;
    for (std::size_t i = 0; i < 3; ++i) q[i] = place(Pt{s[i].x + jitter(rng), s[i].y + jitter(rng)});
    const double len = std::hypot(q[1].x - q[0].x, q[1].y - q[0].y) + std::hypot(q[2].x - q[1].x, q[2].y - q[1].y);
    const int steps = std::max(8, static_cast<int>(len * static_cast<double>(size) * 2.0));
    for (int k = 0; k <= steps; ++k) {
      const double t = static_cast<double>(k) / steps;
      const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
      const double x = a * q[0].x + b * q[1].x + c * q[2].x;
      const double y = a * q[0].y + b * q[1].y + c * q[2].y;
      stamp(ink, size, x * static_cast<double>(size), y * static_cast<double>(size), radius);
    }
  }
  std::vector<std::uint8_t> gray(size * size);
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - ink[i])));
  return gray;
}

}  // namespace

void make_glyph_dataset(const std::filesystem::path& dir, const GlyphSetSpec& spec) {
  if (spec.n_classes == 0 || spec.samples_per_class == 0 || spec.image_size < 8) {
    throw ConfigError("make-glyphs: need at least one class, one sample and 8x8 images");
  }
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.txt").string());
  manifest << "# synthetic stroke glyphs: <class-id> <path>\n";
  std::mt19937_64 rng(spec.seed);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    const auto proto = make_prototype(rng);
    std::ostringstream cid;
    cid << "glyph" << std::setw(4) << std::setfill('0') << c;
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      std::ostringstream rel;
      rel << "images/" << cid.str() << "_" << std::setw(2) << std::setfill('0') << s << ".pgm";
      write_pgm(dir / rel.str(), spec.image_size, spec.image_size, render_sample(proto, spec.image_size, rng));
      manifest << cid.str() << ' ' << rel.str() << '\n';
    }
  }
}

}  // namespace metaplast::tasks
