#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "metaplast/errors.hpp"
#include "metaplast/tasks.hpp"

namespace metaplast::tasks {

namespace fs = std::filesystem;

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t parse_dim(const std::string& tok, const fs::path& path) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError("undecodable image " + path.string() + ": bad header field '" + tok + "'");
  }
}

}  // namespace

GrayImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const std::string magic = pgm_token(in);
  if (magic != "P5") throw DataError("undecodable image " + path.string() + ": not a binary PGM (P5)");
  const std::size_t w = parse_dim(pgm_token(in), path);
  const std::size_t h = parse_dim(pgm_token(in), path);
  const std::size_t maxval = parse_dim(pgm_token(in), path);
  if (maxval > 255) {
    throw DataError("undecodable image " + path.string() + ": unsupported bit depth (maxval " +
                    std::to_string(maxval) + "), expected 8-bit");
  }
  std::vector<unsigned char> buf(w * h);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw DataError("undecodable image " + path.string() + ": truncated pixel data");
  }
  GrayImage img{h, w, std::vector<float>(w * h)};
  for (std::size_t i = 0; i < buf.size(); ++i) {
    img.pixels[i] = static_cast<float>(std::min<std::size_t>(buf[i], maxval)) / static_cast<float>(maxval);
  }
  return img;
}

void write_pgm(const fs::path& path, std::size_t height, std::size_t width, const std::vector<std::uint8_t>& gray) {
  if (gray.size() != height * width) throw ShapeError("write_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

GrayImage normalize_image(const GrayImage& raw, std::size_t size) {
  if (raw.height == 0 || raw.width == 0) throw DataError("normalize_image: empty image");
  GrayImage out{size, size, std::vector<float>(size * size)};
  const double sy = static_cast<double>(raw.height) / static_cast<double>(size);
  const double sx = static_cast<double>(raw.width) / static_cast<double>(size);
  for (std::size_t r = 0; r < size; ++r) {
    const double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(raw.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, raw.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t c = 0; c < size; ++c) {
      const double fx = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(raw.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, raw.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double v = (1 - wy) * ((1 - wx) * raw.at(y0, x0) + wx * raw.at(y0, x1)) +
                       wy * ((1 - wx) * raw.at(y1, x0) + wx * raw.at(y1, x1));
      out.pixels[r * size + c] = static_cast<float>(1.0 - v);
    }
  }
  return out;
}

GrayImage rotate90(const GrayImage& img, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  GrayImage cur = img;
  for (int i = 0; i < k; ++i) {
    GrayImage next{cur.width, cur.height, std::vector<float>(cur.pixels.size())};
    // counter-clockwise: new(r, c) = old(c, W - 1 - r)
    for (std::size_t r = 0; r < next.height; ++r) {
      for (std::size_t c = 0; c < next.width; ++c) next.pixels[r * next.width + c] = cur.at(c, cur.width - 1 - r);
    }
    cur = std::move(next);
  }
  return cur;
}

DatasetIndex load_dataset_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const fs::path root = manifest.parent_path();
  DatasetIndex idx;
  std::map<std::string, std::size_t> where;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string id, rel, extra;
    if (!(ls >> id >> rel) || (ls >> extra)) {
      throw DataError("malformed manifest " + manifest.string() + ":" + std::to_string(lineno) +
                      ": expected '<class-id> <path>'");
    }
    const fs::path p = root / rel;
    if (!fs::exists(p)) throw DataError("missing image " + p.string() + " (manifest line " + std::to_string(lineno) + ")");
    auto [it, inserted] = where.emplace(id, idx.classes.size());
    if (inserted) idx.classes.push_back({id, {}, 0});
    idx.classes[it->second].paths.push_back(p);
  }
  if (idx.classes.empty()) throw DataError("manifest " + manifest.string() + " lists no images");
  return idx;
}

DatasetIndex augment_rotations(const DatasetIndex& idx) {
  DatasetIndex out;
  out.split = idx.split;
  for (const auto& c : idx.classes) {
    for (int k = 0; k < 4; ++k) {
      DatasetIndex::Class r = c;
      r.rotation = (c.rotation + k) % 4;
      if (k != 0) r.id = c.id + "@rot" + std::to_string(90 * k);
      out.classes.push_back(std::move(r));
    }
  }
  return out;
}

std::pair<DatasetIndex, DatasetIndex> split_train_test(const DatasetIndex& idx, double test_frac,
                                                       std::mt19937_64& rng) {
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw ConfigError("split: test fraction must lie in (0, 1)");
  const std::size_t n = idx.classes.size();
  // small epsilon so that e.g. 10 * 0.2 is not floored to 1
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_frac + 1e-9));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<char> is_test(n, 0);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = 1;
  DatasetIndex train, test;
  train.split = "train";
  test.split = "test";
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? test : train).classes.push_back(idx.classes[i]);
  return {train, test};
}

ImageSet load_images(const DatasetIndex& idx, std::size_t size) {
  ImageSet set;
  for (const auto& c : idx.classes) {
    set.class_ids.push_back(c.id);
    std::vector<GrayImage> imgs;
    imgs.reserve(c.paths.size());
    for (const auto& p : c.paths) imgs.push_back(rotate90(normalize_image(read_pgm(p), size), c.rotation));
    set.images.push_back(std::move(imgs));
  }
  return set;
}

}  // namespace metaplast::tasks
