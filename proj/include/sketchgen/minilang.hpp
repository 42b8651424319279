#pragma once

namespace sketchgen {

// Built-in copy of grammars/minilang.g; the CLI falls back to it when no
// grammar file is given. A test keeps the two in sync.
inline constexpr const char* kMiniLangGrammar =
    R"gram(# MiniLang: a small statement language of assignments, calls, member access,
# binary operators, and literals.
token IDENT /[A-Za-z_][A-Za-z0-9_]*/
token NUMBER /[0-9]+(\.[0-9]+)?/
token STRING /"[^"]*"/

start Statement

Statement -> Assign | ExprStmt
Assign -> Target "=" Expr
Target -> IDENT | Member
ExprStmt -> Call
Expr -> Term | Expr AddOp Term
Term -> Factor | Term MulOp Factor
Factor -> Atom | "(" Expr ")"
Atom -> IDENT | NUMBER | STRING | Call | Member
Call -> Callee "(" Args ")"
Callee -> IDENT | Member
Member -> Primary "." IDENT
Primary -> IDENT | Member
Args -> Arg | Arg "," Args
Arg -> Expr | IDENT "=" Expr
AddOp -> "+" | "-"
MulOp -> "*" | "/"
)gram";

}  // namespace sketchgen
