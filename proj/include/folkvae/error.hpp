#pragma once

#include <stdexcept>
#include <string>

namespace folkvae {

// Error with a stable category tag; the CLI prints "error[<category>]: <what>"
// so scripts can branch on the category without parsing prose.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const { return category_; }

private:
    std::string category_;
};

inline Error io_error(const std::string& msg)     { return Error("io", msg); }
inline Error parse_error(const std::string& msg)  { return Error("parse", msg); }
inline Error config_error(const std::string& msg) { return Error("config", msg); }
inline Error data_error(const std::string& msg)   { return Error("data", msg); }
inline Error model_error(const std::string& msg)  { return Error("model", msg); }

} // namespace folkvae
