#include <filesystem>
#include <doctest.h>

#include "bnrl/csv.hpp"
#include "bnrl/errors.hpp"

namespace csv = bnrl::csv;

TEST_CASE("field escaping and splitting round-trip") {
    CHECK(csv::escape_field("plain") == "plain");
    CHECK(csv::escape_field("a,b") == "\"a,b\"");
    CHECK(csv::escape_field("say \"hi\"") == "\"say \"\"hi\"\"\"");

    CHECK(csv::split_line("a,b,c") == std::vector<std::string>{"a", "b", "c"});
    CHECK(csv::split_line("\"a,b\",c") ==
          std::vector<std::string>{"a,b", "c"});
    CHECK(csv::split_line("\"say \"\"hi\"\"\"") ==
          std::vector<std::string>{"say \"hi\""});
    CHECK(csv::split_line("x,,y") == std::vector<std::string>{"x", "", "y"});
    CHECK(csv::split_line("") == std::vector<std::string>{""});
}

TEST_CASE("file round-trip") {
    const auto path =
        std::filesystem::temp_directory_path() / "bnrl_csv_test.csv";
    const std::vector<std::string> header{"id", "json", "value"};
    const std::vector<std::vector<std::string>> rows{
        {"1", "{\"k\":1,\"s\":\"a,b\"}", "0.5"},
        {"2", "{}", "-1"},
    };
    csv::write_rows(path, header, rows);
    const auto got = csv::read_rows(path);
    REQUIRE(got.size() == 3);
    CHECK(got[0] == header);
    CHECK(got[1] == rows[0]);
    CHECK(got[2] == rows[1]);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(csv::read_rows(path), bnrl::FormatError);
}
