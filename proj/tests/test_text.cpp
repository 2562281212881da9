// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "clue/text.hpp"

using namespace clue;

TEST_CASE("trim removes surrounding whitespace only") {
  CHECK(trim("  hello  ") == "hello");
  CHECK(trim("\t\r\n x \n") == "x");
  CHECK(trim("a  b") == "a  b");
  CHECK(trim("") == "");
  CHECK(trim("   ") == "");
}

TEST_CASE("collapse_whitespace folds runs and trims") {
  CHECK(collapse_whitespace("a\t b\n\nc") == "a b c");
  CHECK(collapse_whitespace("  lead and trail  ") == "lead and trail");
  CHECK(collapse_whitespace("") == "");
  CHECK(collapse_whitespace(" \n\t ") == "");
}

TEST_CASE("split_lines handles CRLF and trailing newline") {
  auto lines = split_lines("a\r\nb\nc");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "a");
  CHECK(lines[1] == "b");
  CHECK(lines[2] == "c");
  CHECK(split_lines("x\n").size() == 2);  // final empty line kept
  CHECK(split_lines("").size() == 1);
}

TEST_CASE("word_tokens lowercases and splits on non-alphanumerics") {
  auto tokens = word_tokens("Hello, World! x2");
  REQUIRE(tokens.size() == 3);
  CHECK(tokens[0] == "hello");
  CHECK(tokens[1] == "world");
  CHECK(tokens[2] == "x2");
  CHECK(word_tokens("---").empty());
}

TEST_CASE("truncate_chars clamps without throwing") {
  CHECK(truncate_chars("abcdef", 3) == "abc");
  CHECK(truncate_chars("ab", 10) == "ab");
  CHECK(truncate_chars("", 5) == "");
}

TEST_CASE("fnv1a64 matches the published reference vectors") {
  // Offset basis and the classic "a" / "foobar" vectors for FNV-1a 64-bit.
  CHECK(fnv1a64("") == 14695981039346656037ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("to_hex is fixed-width lowercase") {
  CHECK(to_hex(0) == "0000000000000000");
  CHECK(to_hex(0xdeadbeefull) == "00000000deadbeef");
  CHECK(to_hex(~0ull) == "ffffffffffffffff");
}

TEST_CASE("render_template substitutes all occurrences and leaves unknown braces") {
  std::string out = render_template("{a}+{a}={b} {c}", {{"a", "1"}, {"b", "2"}});
  CHECK(out == "1+1=2 {c}");
  CHECK(render_template("json: {\"k\": 1}", {}) == "json: {\"k\": 1}");
  // Replacement text containing the needle must not loop.
  CHECK(render_template("{x}", {{"x", "{x}!"}}) == "{x}!");
}

TEST_CASE("extract_json_block finds the first balanced object") {
  auto block = extract_json_block("prose ```json\n{\"a\": {\"b\": 1}}\n``` tail");
  REQUIRE(block.has_value());
  CHECK(*block == "{\"a\": {\"b\": 1}}");

  SECTION("braces inside strings do not break balance") {
    auto b = extract_json_block(R"(x {"s": "close } brace \" quote"} y)");
    REQUIRE(b.has_value());
    CHECK(*b == R"({"s": "close } brace \" quote"})");
  }
  SECTION("arrays via the open parameter") {
    auto b = extract_json_block("noise [1, [2]] rest", '[');
    REQUIRE(b.has_value());
    CHECK(*b == "[1, [2]]");
  }
  SECTION("unbalanced text yields nothing") {
    CHECK_FALSE(extract_json_block("{ never closed").has_value());
    CHECK_FALSE(extract_json_block("no json here").has_value());
  }
  SECTION("an unbalanced prefix is skipped in favor of a later block") {
    auto b = extract_json_block("{ broken \"x\" { \"ok\": 1 }");
    REQUIRE(b.has_value());
    CHECK(*b == "{ \"ok\": 1 }");
  }
}

TEST_CASE("last_number picks the final numeric literal") {
  CHECK(last_number("The total is 17.") == 17.0);
  CHECK(last_number("3 then 4 then 5") == 5.0);
  CHECK(last_number("pi is 3.14 ok") == 3.14);
  CHECK(last_number("minus -2") == -2.0);
  CHECK(last_number("exp 1e3!") == 1000.0);
  CHECK(last_number("1.5e-2 end") == 0.015);
  CHECK_FALSE(last_number("no digits").has_value());
  CHECK_FALSE(last_number("").has_value());
  // A trailing period is sentence punctuation, not a decimal point.
  CHECK(last_number("answer 42.") == 42.0);
  // "e" not followed by digits stays out of the literal.
  CHECK(last_number("7e") == 7.0);
}

TEST_CASE("format helpers") {
  CHECK(format_percent(0.46) == "46.00");
  CHECK(format_percent(0.0) == "0.00");
  CHECK(format_percent(1.0) == "100.00");
  CHECK(format_percent(0.87495) == "87.50");  // rounds
  CHECK(format_number(17.0) == "17");
  CHECK(format_number(3.14) == "3.14");
  CHECK(format_number(0.5) == "0.5");
}
