#include "sa2co/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sa2co/common.hpp"

namespace sa2co::csv {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

}  // namespace

int Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

int Table::require_column(const std::string& name) const {
    int c = column(name);
    if (c < 0) throw IngestError("csv: missing column '" + name + "'");
    return c;
}

Table parse(const std::string& text) {
    Table t;
    std::istringstream is(text);
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        auto cells = split_line(line);
        for (auto& c : cells) c = trim(c);
        if (first) {
            t.header = cells;
            first = false;
        } else {
            t.rows.push_back(cells);
        }
    }
    return t;
}

Table read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IngestError("csv: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse(os.str());
}

double to_double(const Table& t, std::size_t row, int col) {
    const auto& cell = t.rows.at(row).at(static_cast<std::size_t>(col));
    try {
        std::size_t pos = 0;
        double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw IngestError("csv: bad numeric value '" + cell + "' at data row " +
                          std::to_string(row + 1));
    }
}

long to_long(const Table& t, std::size_t row, int col) {
    const auto& cell = t.rows.at(row).at(static_cast<std::size_t>(col));
    try {
        std::size_t pos = 0;
        long v = std::stol(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw IngestError("csv: bad integer value '" + cell + "' at data row " +
                          std::to_string(row + 1));
    }
}

bool empty_cell(const Table& t, std::size_t row, int col) {
    if (col < 0) return true;
    const auto& cells = t.rows.at(row);
    if (static_cast<std::size_t>(col) >= cells.size()) return true;
    return cells[static_cast<std::size_t>(col)].empty();
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // prefer the shortest representation that still round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char probe[64];
        std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(probe, "%lf", &back);
        if (back == v) return probe;
    }
    return buf;
}

struct Writer::Impl {
    std::ofstream out;
};

Writer::Writer(const std::string& path) : impl_(new Impl) {
    impl_->out.open(path);
    if (!impl_->out) throw IngestError("csv: cannot write " + path);
}

Writer::~Writer() {
    impl_->out.flush();
    delete impl_;
}

void Writer::row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) impl_->out << ',';
        impl_->out << cells[i];
    }
    impl_->out << '\n';
}

void Writer::flush() { impl_->out.flush(); }

}  // namespace sa2co::csv
