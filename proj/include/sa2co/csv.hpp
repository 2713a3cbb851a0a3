#pragma once

#include <string>
#include <vector>

namespace sa2co::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;  // -1 if absent
    int require_column(const std::string& name) const;
};

Table read_file(const std::string& path);
Table parse(const std::string& text);

/// Cell accessors; row numbers in error messages are 1-based data rows.
double to_double(const Table& t, std::size_t row, int col);
long to_long(const Table& t, std::size_t row, int col);
bool empty_cell(const Table& t, std::size_t row, int col);

/// Formats a double with enough digits to round-trip exactly.
std::string format_double(double v);

class Writer {
public:
    explicit Writer(const std::string& path);
    ~Writer();
    void row(const std::vector<std::string>& cells);
    void flush();

private:
    struct Impl;
    Impl* impl_;
};

}  // namespace sa2co::csv
