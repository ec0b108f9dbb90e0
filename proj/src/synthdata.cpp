#include "cfviz/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cfviz/errors.hpp"
#include "cfviz/textio.hpp"

namespace cfviz {

std::pair<double, double> group_sigma_interval(int group) {
  if (group == 1) return {2.0, 6.0};
  if (group == 2) return {4.0, 8.0};
  throw ValidationError("group must be 1 or 2, got " + std::to_string(group));
}

void render_blob(Tensor& image, const BlobSpec& blob) {
  if (image.rank() != 2) throw ShapeError("render_blob: image must be 2-D");
  const int h = static_cast<int>(image.extent(0));
  const int w = static_cast<int>(image.extent(1));
  if (!(blob.sigma > 0.0)) throw ValidationError("render_blob: sigma must be > 0");
  if (blob.center_row < 0 || blob.center_row >= h || blob.center_col < 0 || blob.center_col >= w) {
    throw ValidationError("render_blob: center outside image bounds");
  }
  const double inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
  for (int r = 0; r < h; ++r) {
    const double dr = r - blob.center_row;
    for (int c = 0; c < w; ++c) {
      const double dc = c - blob.center_col;
      image[static_cast<std::size_t>(r) * w + c] += blob.amplitude * std::exp(-(dr * dr + dc * dc) * inv);
    }
  }
}

SyntheticRecord generate_image(int group, Rng& rng) {
  const auto [lo, hi] = group_sigma_interval(group);
  SyntheticRecord rec;
  rec.group = group;
  rec.image = Tensor({kImageSize, kImageSize});
  for (std::size_t b = 0; b < 4; ++b) {
    rec.sigma[b] = rng.uniform(lo, hi);
    render_blob(rec.image, BlobSpec{kBlobCenters[b].first, kBlobCenters[b].second, rec.sigma[b], 1.0});
  }
  return rec;
}

Dataset generate_dataset(int n_per_group, std::uint64_t seed) {
  if (n_per_group < 1) throw ValidationError("n_per_group must be >= 1");
  Dataset data;
  data.n_per_group = n_per_group;
  data.seed = seed;
  data.confounder_names = {"sigma_B", "sigma_C"};
  data.records.reserve(static_cast<std::size_t>(2 * n_per_group));
  for (int i = 0; i < 2 * n_per_group; ++i) {
    const int group = i < n_per_group ? 1 : 2;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    data.records.push_back(generate_image(group, rng));
  }
  return data;
}

std::vector<std::pair<int, int>> block_mask(Block block) {
  const int idx = static_cast<int>(block);
  if (idx < 0 || idx > 3) throw ValidationError("block_mask: invalid block");
  const int r0 = (idx / 2) * kBlockSize;
  const int c0 = (idx % 2) * kBlockSize;
  std::vector<std::pair<int, int>> px;
  px.reserve(kBlockSize * kBlockSize);
  for (int r = r0; r < r0 + kBlockSize; ++r)
    for (int c = c0; c < c0 + kBlockSize; ++c) px.emplace_back(r, c);
  return px;
}

double sigma_of(const SyntheticRecord& rec, const std::string& confounder_name) {
  for (std::size_t b = 0; b < 4; ++b) {
    if (confounder_name == std::string("sigma_") + kBlockNames[b]) return rec.sigma[b];
  }
  throw ValidationError("unknown confounder column '" + confounder_name + "'");
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["n_per_group"] = data.n_per_group;
  manifest["n_records"] = data.records.size();
  manifest["seed"] = data.seed;
  manifest["confounder_names"] = data.confounder_names;
  manifest["image_height"] = kImageSize;
  manifest["image_width"] = kImageSize;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string csv;
  csv.reserve(data.records.size() * 1024 * 12);
  csv += "id,group,sigma_A,sigma_B,sigma_C,sigma_D";
  for (int p = 0; p < kImageSize * kImageSize; ++p) csv += ",pixel_" + std::to_string(p);
  csv += "\n";
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const SyntheticRecord& rec = data.records[i];
    csv += std::to_string(i);
    csv += ",";
    csv += std::to_string(rec.group);
    for (double s : rec.sigma) {
      csv += ",";
      csv += format_double(s);
    }
    for (std::size_t p = 0; p < rec.image.size(); ++p) {
      csv += ",";
      csv += format_double(rec.image[p]);
    }
    csv += "\n";
  }
  write_text_file(dir / "data.csv", csv);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto csv_path = dir / "data.csv";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }

  Dataset data;
  try {
    data.n_per_group = manifest.at("n_per_group").get<int>();
    data.seed = manifest.at("seed").get<std::uint64_t>();
    data.confounder_names = manifest.at("confounder_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: missing or invalid field: " + std::string(e.what()));
  }

  std::ifstream in(csv_path);
  if (!in) throw FormatError("cannot open " + csv_path.string());
  std::string header;
  std::getline(in, header);
  {
    std::string expect = "id,group,sigma_A,sigma_B,sigma_C,sigma_D";
    for (int p = 0; p < kImageSize * kImageSize; ++p) expect += ",pixel_" + std::to_string(p);
    if (header != expect) throw FormatError("data.csv: unexpected header");
  }

  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    auto next = [&](const char* field) -> std::string {
      if (!std::getline(ss, cell, ',')) {
        throw FormatError("data.csv: truncated row, missing field " + std::string(field));
      }
      return cell;
    };
    SyntheticRecord rec;
    next("id");
    rec.group = std::stoi(next("group"));
    if (rec.group != 1 && rec.group != 2) throw FormatError("data.csv: group must be 1 or 2");
    for (std::size_t b = 0; b < 4; ++b) rec.sigma[b] = parse_double(next("sigma"), "data.csv sigma");
    std::vector<double> px(kImageSize * kImageSize);
    for (std::size_t p = 0; p < px.size(); ++p) px[p] = parse_double(next("pixel"), "data.csv pixel");
    rec.image = Tensor({kImageSize, kImageSize}, std::move(px));
    data.records.push_back(std::move(rec));
  }
  const std::size_t expected = manifest.at("n_records").get<std::size_t>();
  if (data.records.size() != expected) {
    throw FormatError("data.csv: row count " + std::to_string(data.records.size()) +
                      " does not match manifest n_records " + std::to_string(expected));
  }
  return data;
}

}  // namespace cfviz
