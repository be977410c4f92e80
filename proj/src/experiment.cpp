#include "vedet/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "vedet/errors.hpp"

namespace vedet {

namespace {

std::string num(double v, int precision = 10) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  boost::split(out, text, boost::is_any_of(","));
  for (std::string& s : out) boost::trim(s);
  out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
  return out;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const std::vector<std::string>& palette() {
  static const std::vector<std::string> colors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                  "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return colors;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  return out;
}

// One line-chart panel with its own axes.
void line_panel(std::ostream& svg, double x0, double y0, double w, double h, const std::string& title,
                const std::vector<CellSummary>& cells, double CurvePoint::*field) {
  int max_epoch = 1;
  double ymax = 0.0;
  for (const CellSummary& c : cells) {
    for (const CurvePoint& p : c.curve) {
      max_epoch = std::max(max_epoch, p.epoch);
      ymax = std::max(ymax, p.*field);
    }
  }
  ymax = ymax > 0.0 ? std::ceil(ymax * 10.0 + 1e-9) / 10.0 : 1.0;
  const double left = x0 + 50, top = y0 + 30, pw = w - 70, ph = h - 70;
  auto sx = [&](double e) { return left + pw * e / max_epoch; };
  auto sy = [&](double v) { return top + ph * (1.0 - v / ymax); };
  svg << "<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 + 18 << "\" text-anchor=\"middle\" font-size=\"14\">"
      << escape_xml(title) << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = ymax * i / 5.0;
    svg << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << sy(v) << "\" y2=\"" << sy(v)
        << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << sy(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
        << fixed(v, 2) << "</text>\n";
  }
  const int step = std::max(1, max_epoch / 8);
  for (int e = 0; e <= max_epoch; e += step) {
    svg << "<text x=\"" << sx(e) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
        << e << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << top + ph + 34
      << "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string& color = palette()[i % palette().size()];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const CurvePoint& p : cells[i].curve) svg << sx(p.epoch) << "," << sy(p.*field) << " ";
    svg << "\"/>\n";
    const double ly = top + 14 + 16 * static_cast<double>(i);
    svg << "<line x1=\"" << left + 10 << "\" x2=\"" << left + 30 << "\" y1=\"" << ly - 4 << "\" y2=\"" << ly - 4
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + 36 << "\" y=\"" << ly << "\" font-size=\"12\">" << escape_xml(cells[i].name)
        << "</text>\n";
  }
}

}  // namespace

AblationMatrix parse_ablation_matrix(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("ablation matrix not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  AblationMatrix m;
  const std::filesystem::path base = path.parent_path();
  for (const auto& [section, body] : tree) {
    if (section == "matrix") {
      for (const auto& [key, node] : body) {
        const std::string value = node.get_value<std::string>();
        if (key == "config") {
          for (const std::string& f : split_list(value)) {
            const std::filesystem::path p(f);
            m.configs.push_back(p.is_absolute() ? p : base / p);
          }
        } else if (key == "seeds") {
          for (const std::string& s : split_list(value)) {
            try {
              std::size_t used = 0;
              m.seeds.push_back(std::stoull(s, &used));
              if (used != s.size()) throw std::invalid_argument(s);
            } catch (const std::logic_error&) {
              throw ConfigError("matrix: bad seed '" + s + "'");
            }
          }
        } else if (key.rfind("set.", 0) == 0) {
          m.overrides.push_back(key.substr(4) + "=" + value);
        } else {
          throw ConfigError("matrix: unknown key 'matrix." + key + "'");
        }
      }
    } else if (section.rfind("cell.", 0) == 0 && section.size() > 5) {
      AblationCell cell{section.substr(5), {}};
      for (const auto& [key, node] : body) cell.overrides.push_back(key + "=" + node.get_value<std::string>());
      m.cells.push_back(std::move(cell));
    } else {
      throw ConfigError("matrix: unknown section '" + section + "'");
    }
  }
  if (m.cells.empty()) throw ConfigError("matrix: no [cell.<name>] sections");
  if (m.seeds.empty()) throw ConfigError("matrix: no seeds");
  for (const AblationCell& c : m.cells) {
    if (c.name.find_first_of("/\\ ,") != std::string::npos) throw ConfigError("matrix: bad cell name '" + c.name + "'");
  }
  // Every cell must resolve to a valid config.
  for (const AblationCell& c : m.cells) {
    std::vector<std::string> ov = m.overrides;
    ov.insert(ov.end(), c.overrides.begin(), c.overrides.end());
    ExperimentConfig cfg = load_config(m.configs, ov);
    cfg.finalize();
  }
  return m;
}

std::vector<std::string> seed_overrides(std::uint64_t seed) {
  return {"train.seed=" + std::to_string(seed), "model.init_seed=" + std::to_string(seed)};
}

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ParseError("csv: missing column '" + name + "'");
  return static_cast<int>(it - header.begin());
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const std::string& cell = rows.at(row).at(static_cast<std::size_t>(column(name)));
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::logic_error&) {
    throw ParseError("csv: column '" + name + "' holds non-number '" + cell + "'");
  }
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  CsvTable t;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    boost::split(fields, line, boost::is_any_of(","));
    if (t.header.empty()) {
      t.header = fields;
    } else {
      if (fields.size() != t.header.size()) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                         std::to_string(t.header.size()) + " fields");
      }
      t.rows.push_back(std::move(fields));
    }
  }
  if (t.header.empty()) throw ParseError(path.string() + ": empty file");
  return t;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols = {"mAP", "mATE", "mASE", "mAOE", "mAVE", "nds_like"};
  return cols;
}

std::string report_row(const MetricReport& r) {
  return num(r.mAP) + "," + num(r.mATE) + "," + num(r.mASE) + "," + num(r.mAOE) + "," + num(r.mAVE) + "," +
         num(r.nds_like);
}

void write_predictions(const std::filesystem::path& path, const PredictionSet& preds) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["scenes"] = nlohmann::json::object();
  for (const auto& [id, dets] : preds) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Detection& d : dets) {
      const Box3D& b = d.box;
      arr.push_back({{"center_m", {b.center.x(), b.center.y(), b.center.z()}},
                     {"dims_wlh_m", {b.dims.x(), b.dims.y(), b.dims.z()}},
                     {"yaw_rad", b.yaw},
                     {"velocity_mps", {b.velocity.x(), b.velocity.y(), b.velocity.z()}},
                     {"class_id", b.class_id},
                     {"score", d.score}});
    }
    j["scenes"][id] = std::move(arr);
  }
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
}

PredictionSet read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": malformed JSON: " + e.what());
  }
  auto fail = [&](const std::string& where, const std::string& what) {
    throw ParseError(path.string() + ": field '" + where + "': " + what);
  };
  if (!j.is_object() || !j.contains("schema_version") || !j["schema_version"].is_number_integer()) {
    fail("$.schema_version", "missing");
  }
  if (j["schema_version"].get<int>() != 1) {
    throw UnsupportedVersionError(path.string() + ": unsupported schema_version");
  }
  if (!j.contains("scenes") || !j["scenes"].is_object()) fail("$.scenes", "expected an object");
  PredictionSet out;
  for (const auto& [id, arr] : j["scenes"].items()) {
    const std::string where = "$.scenes." + id;
    if (!arr.is_array()) fail(where, "expected an array");
    std::vector<Detection>& dets = out[id];
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto& e = arr[i];
      const std::string w = where + "[" + std::to_string(i) + "]";
      try {
        Detection d;
        const auto c = e.at("center_m").get<std::vector<double>>();
        const auto s = e.at("dims_wlh_m").get<std::vector<double>>();
        const auto v = e.at("velocity_mps").get<std::vector<double>>();
        if (c.size() != 3 || s.size() != 3 || v.size() != 3) fail(w, "vectors must have 3 entries");
        d.box.center = Vec3(c[0], c[1], c[2]);
        d.box.dims = Vec3(s[0], s[1], s[2]);
        d.box.velocity = Vec3(v[0], v[1], v[2]);
        d.box.yaw = e.at("yaw_rad").get<double>();
        d.box.class_id = e.at("class_id").get<int>();
        d.score = e.at("score").get<double>();
        dets.push_back(d);
      } catch (const nlohmann::json::exception& ex) {
        fail(w, ex.what());
      }
    }
  }
  return out;
}

MetricReport evaluate_predictions(const PredictionSet& preds, const Dataset& data, int num_classes,
                                  double score_threshold) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Box3D>> gts;
  for (const LoadedScene& s : data.scenes) {
    const auto it = preds.find(scene_id(s.scene.seed));
    dets.push_back(it == preds.end() ? std::vector<Detection>{} : it->second);
    gts.push_back(s.scene.boxes);
  }
  return evaluate_detections(dets, gts, num_classes, score_threshold);
}

std::filesystem::path run_dir(const std::filesystem::path& out, const std::string& cell, std::uint64_t seed) {
  return out / "runs" / cell / ("seed" + std::to_string(seed));
}

std::vector<CellSummary> summarize_ablation(const std::filesystem::path& dir, const std::vector<std::string>& cells) {
  const CsvTable table = read_csv(dir / "table.csv");
  const int cell_col = table.column("cell"), seed_col = table.column("seed");
  std::vector<CellSummary> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string& name = table.rows[r][static_cast<std::size_t>(cell_col)];
    if (!cells.empty() && std::find(cells.begin(), cells.end(), name) == cells.end()) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const CellSummary& c) { return c.name == name; });
    if (it == out.end()) {
      out.push_back({name, {}, {}, 0.0, 0.0, 0.0, 0.0});
      it = out.end() - 1;
    }
    it->seeds.push_back(std::stoull(table.rows[r][static_cast<std::size_t>(seed_col)]));
    it->mAP += table.number(r, "mAP");
    it->mAP_std += table.number(r, "mAP") * table.number(r, "mAP");
    it->nds_like += table.number(r, "nds_like");
    it->mATE += table.number(r, "mATE");
  }
  for (const std::string& want : cells) {
    if (std::none_of(out.begin(), out.end(), [&](const CellSummary& c) { return c.name == want; })) {
      throw ConfigError("report: no cell named '" + want + "' in " + (dir / "table.csv").string());
    }
  }
  for (CellSummary& c : out) {
    const double n = static_cast<double>(c.seeds.size());
    c.mAP /= n;
    c.mAP_std = std::sqrt(std::max(0.0, c.mAP_std / n - c.mAP * c.mAP));
    c.nds_like /= n;
    c.mATE /= n;
    std::map<int, std::pair<CurvePoint, int>> acc;
    for (std::uint64_t seed : c.seeds) {
      const CsvTable m = read_csv(run_dir(dir, c.name, seed) / "metrics.csv");
      for (std::size_t r = 0; r < m.rows.size(); ++r) {
        const int epoch = static_cast<int>(m.number(r, "epoch"));
        auto& [p, count] = acc[epoch];
        p.epoch = epoch;
        p.mAP += m.number(r, "mAP");
        p.nds_like += m.number(r, "nds_like");
        ++count;
      }
    }
    for (auto& [epoch, pc] : acc) {
      CurvePoint p = pc.first;
      p.mAP /= pc.second;
      p.nds_like /= pc.second;
      c.curve.push_back(p);
    }
  }
  return out;
}

void write_report(const std::vector<CellSummary>& cells, const std::filesystem::path& out) {
  if (cells.empty()) throw ConfigError("report: nothing to plot");
  std::filesystem::create_directories(out);
  {
    std::ofstream csv = open_out(out / "curves.csv");
    csv << "cell,epoch,mAP,nds_like\n";
    for (const CellSummary& c : cells) {
      for (const CurvePoint& p : c.curve) csv << c.name << "," << p.epoch << "," << num(p.mAP) << "," << num(p.nds_like) << "\n";
    }
  }
  {
    const double w = 480, h = 340;
    std::ofstream svg = open_out(out / "curves.svg");
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * w << "\" height=\"" << h
        << "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    line_panel(svg, 0, 0, w, h, "val mAP per epoch", cells, &CurvePoint::mAP);
    line_panel(svg, w, 0, w, h, "val nds_like per epoch", cells, &CurvePoint::nds_like);
    svg << "</svg>\n";
  }
  {
    std::ofstream csv = open_out(out / "ablation.csv");
    csv << "cell,seeds,mAP,mAP_std,nds_like,mATE\n";
    for (const CellSummary& c : cells) {
      csv << c.name << "," << c.seeds.size() << "," << num(c.mAP) << "," << num(c.mAP_std) << ","
          << num(c.nds_like) << "," << num(c.mATE) << "\n";
    }
  }
  {
    std::size_t width = 4;
    for (const CellSummary& c : cells) width = std::max(width, c.name.size());
    std::ofstream txt = open_out(out / "ablation.txt");
    txt << std::left << std::setw(static_cast<int>(width)) << "cell" << "  seeds  mAP              nds_like  mATE\n";
    for (const CellSummary& c : cells) {
      txt << std::left << std::setw(static_cast<int>(width)) << c.name << "  " << std::setw(5) << c.seeds.size()
          << "  " << fixed(c.mAP, 4) << " +- " << fixed(c.mAP_std, 4) << "  " << fixed(c.nds_like, 4) << "    "
          << fixed(c.mATE, 4) << "\n";
    }
  }
  {
    const double bar = 60, gap = 30, left = 60, top = 40, ph = 240;
    const double w = left + (bar + gap) * static_cast<double>(cells.size()) + gap;
    double ymax = 0.0;
    for (const CellSummary& c : cells) ymax = std::max(ymax, c.mAP + c.mAP_std);
    ymax = ymax > 0.0 ? std::ceil(ymax * 10.0 + 1e-9) / 10.0 : 1.0;
    std::ofstream svg = open_out(out / "ablation.svg");
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << top + ph + 60
        << "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">final val mAP (mean +- std over seeds)</text>\n";
    for (int i = 0; i <= 5; ++i) {
      const double v = ymax * i / 5.0, y = top + ph * (1.0 - v / ymax);
      svg << "<line x1=\"" << left << "\" x2=\"" << w - gap / 2 << "\" y1=\"" << y << "\" y2=\"" << y
          << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 6 << "\" y=\"" << y + 4
          << "\" text-anchor=\"end\" font-size=\"11\">" << fixed(v, 2) << "</text>\n";
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const CellSummary& c = cells[i];
      const double x = left + gap + (bar + gap) * static_cast<double>(i);
      const double y = top + ph * (1.0 - c.mAP / ymax);
      svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar << "\" height=\"" << top + ph - y
          << "\" fill=\"" << palette()[i % palette().size()] << "\"/>\n";
      const double y_hi = top + ph * (1.0 - (c.mAP + c.mAP_std) / ymax);
      const double y_lo = top + ph * (1.0 - std::max(0.0, c.mAP - c.mAP_std) / ymax);
      svg << "<line x1=\"" << x + bar / 2 << "\" x2=\"" << x + bar / 2 << "\" y1=\"" << y_hi << "\" y2=\"" << y_lo
          << "\" stroke=\"black\"/>\n";
      svg << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + ph + 16
          << "\" text-anchor=\"middle\" font-size=\"11\">" << escape_xml(c.name) << "</text>\n";
      svg << "<text x=\"" << x + bar / 2 << "\" y=\"" << y - 4 << "\" text-anchor=\"middle\" font-size=\"10\">"
          << fixed(c.mAP, 3) << "</text>\n";
    }
    svg << "</svg>\n";
  }
}

}  // namespace vedet
