#pragma once

#include <stdexcept>
#include <string>

namespace hypothetica {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Malformed input text (CSV cell, graph line, config value).
class ParseError : public Error {
   public:
    ParseError(const std::string& what, std::size_t line, std::size_t column)
        : Error(what + " (line " + std::to_string(line) + ", column " +
                std::to_string(column) + ")"),
          line_(line),
          column_(column) {}

    std::size_t line() const { return line_; }
    std::size_t column() const { return column_; }

   private:
    std::size_t line_;
    std::size_t column_;
};

class SchemaError : public Error {
   public:
    using Error::Error;
};

class ValidationError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

class DimensionError : public Error {
   public:
    using Error::Error;
};

// Numerical fitting failures.
class SingularDesignError : public Error {
   public:
    using Error::Error;
};

class DegenerateResponseError : public Error {
   public:
    using Error::Error;
};

class ConvergenceError : public Error {
   public:
    using Error::Error;
};

class PositivityError : public Error {
   public:
    PositivityError(const std::string& what, std::size_t subject, int time)
        : Error(what), subject_(subject), time_(time) {}

    std::size_t subject() const { return subject_; }
    int time() const { return time_; }

   private:
    std::size_t subject_;
    int time_;
};

// An estimator could not be evaluated on the data it was given.
class EstimationError : public Error {
   public:
    using Error::Error;
};

class GraphError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

}  // namespace hypothetica
