#!/usr/bin/env python3
"""Reference evaluator used to pre-compute the expected values in
crates/core/fixtures/fold_cases.json.

Each case was evaluated against PowerShell string semantics for the
folding subset (string concatenation, the -F format operator,
String.Replace, single-character Split with empty segments dropped,
[char] casts, and undefined variables reading as empty strings).
Run this script to regenerate the fixture file; the Rust tests treat
the committed JSON as frozen expected values and never invoke this
script.
"""

import json
import os

BACKSLASH = chr(92)  # [char]92


def fmt(template: str, *args: str) -> str:
    return template.format(*args)


CASES = []


def text(expr: str, expect: str) -> None:
    CASES.append({"expr": expr, "text": expect})


def tlist(expr: str, expect: list) -> None:
    CASES.append({"expr": expr, "list": expect})


# --- concatenation ---------------------------------------------------------
text("'a'+'b'+'c'", "a" + "b" + "c")
text("('T'+('ls1'+'2'))", "T" + ("ls1" + "2"))
text("(('J'+'c44')+'ik'+'h')", ("J" + "c44") + "ik" + "h")
text("('R'+('cr'+'tk')+'r')", "R" + ("cr" + "tk") + "r")
text("('h'+'tt')+('ps'+':')", ("h" + "tt") + ("ps" + ":"))
text("''+''", "")
text("('.e'+'xe')", ".e" + "xe")
text("'do'+''+'ne'", "do" + "" + "ne")
text("(('S0'+'h')+('6'+'tg')+'1')", ("S0" + "h") + ("6" + "tg") + "1")
text("'x'", "x")
text("('W'+('h0f'+'5'+'ho'))", "W" + ("h0f" + "5" + "ho"))
text("('wi'+'n32')+('_Proce'+'s')+'s'", ("wi" + "n32") + ("_Proce" + "s") + "s")

# --- format operator -------------------------------------------------------
text('("{0}" -F \'q\')', fmt("{0}", "q"))
text(
    "(\"{2}{3}{1}{5}{4}{0}\" -F'Y','.D','sYS','tEm.Io','or','IRECT')",
    fmt("{2}{3}{1}{5}{4}{0}", "Y", ".D", "sYS", "tEm.Io", "or", "IRECT"),
)
text(
    "(\"{2}{4}{1}{0}{6}{5}{8}{3}{7}\" -F 't.Ser','TeM.nE','S','aN','Ys','In','vicepo','aGeR','Tm')",
    fmt("{2}{4}{1}{0}{6}{5}{8}{3}{7}", "t.Ser", "TeM.nE", "S", "aN", "Ys", "In", "vicepo", "aGeR", "Tm"),
)
text("(\"{1}{0}\" -F 'b','a')", fmt("{1}{0}", "b", "a"))
text("(\"a{0}b{1}c\" -F 'X','Y')", fmt("a{0}b{1}c", "X", "Y"))
text("(\"{0}{0}\" -F 'ha')", fmt("{0}{0}", "ha"))
text("((\"{1}\"+\"{0}\") -F 'x','y')", fmt("{1}{0}", "x", "y"))
text("(\"{0}-{1}\" -F ('a'+'b'),'c')", fmt("{0}-{1}", "a" + "b", "c"))
text("(\"pre {0}\" -F '')", fmt("pre {0}", ""))
text("(\"{3}{1}{2}{0}\" -F 'd','b','c','a')", fmt("{3}{1}{2}{0}", "d", "b", "c", "a"))

# --- replace ---------------------------------------------------------------
text(
    "('UjmQyj9bw1UjmA5vuovnUjm').\"rePlace\"(('U'+'jm'),[StriNG][Char]92)",
    "UjmQyj9bw1UjmA5vuovnUjm".replace("Ujm", BACKSLASH),
)
text("('abc').\"replace\"('x','y')", "abc".replace("x", "y"))
text("('=PO32=PO32').\"replace\"((('='+'PO')+'32'),'/')", "=PO32=PO32".replace("=PO32", "/"))
text("('aaa').\"replace\"('aa','b')", "aaa".replace("aa", "b"))
text(
    "('LosQyj9bw1LosA5vuovnLos').\"R`ePlACe\"(('L'+'os'),[sTrIng][char]92)",
    "LosQyj9bw1LosA5vuovnLos".replace("Los", BACKSLASH),
)
text("('AbabAB').\"replace\"('ab','X')", "AbabAB".replace("ab", "X"))
text("('hello world').\"replace\"('o','0')", "hello world".replace("o", "0"))
text("('xyx').\"replace\"('x','xx')", "xyx".replace("x", "xx"))

# --- split (empty segments dropped) ---------------------------------------
def ps_split(subject: str, sep: str) -> list:
    return [p for p in subject.split(sep) if p]


tlist("('a@b@c').\"split\"('@')", ps_split("a@b@c", "@"))
tlist("('@x@').\"split\"('@')", ps_split("@x@", "@"))
tlist("('a**b').\"sPl`It\"('*')", ps_split("a**b", "*"))
tlist("('one@two@').\"split\"('@')", ps_split("one@two@", "@"))
tlist("('nosep').\"split\"('@')", ps_split("nosep", "@"))
tlist("('a@@b@@c').\"split\"('@')", ps_split("a@@b@@c", "@"))

# --- char casts ------------------------------------------------------------
text("[char](64)", chr(64))
text("[Char]92", chr(92))
text("[char](97)", chr(97))
text("[char](955)", chr(955))
text("[char](48)", chr(48))
text("[char](126)", chr(126))

# --- undefined variables read as empty text --------------------------------
text("$notdefined", "")
text("$Os0uzdf + [char](64) + $D44dakn", "" + chr(64) + "")
text("$u1 + 'tail'", "" + "tail")
text("'head' + $u2", "head" + "")
text("[StriNG]$undef", "")
text("($a1+$a2)+($a3)", "")
text("('pre'+$nope+'post')", "pre" + "" + "post")
text("(\"{0}x{1}\" -F $aa,$bb)", fmt("{0}x{1}", "", ""))

# --- mixed -----------------------------------------------------------------
text("[StriNG][Char]92", chr(92))
text("[string](64)", "64")
text("(123).\"tostring\"()", "123")
text("('q').\"ToStRiNg\"()", "q")
text("('a'+'b').\"rep`lace\"('b','c')+'d'", ("a" + "b").replace("b", "c") + "d")
text("(\"VarIabl\"+\"E\"+\":W\"+\"Xor\")", "VarIabl" + "E" + ":W" + "Xor")
text("('Ge'+'t'+'-Item')", "Ge" + "t" + "-Item")
text("('new-'+'ob'+'jec'+'t')", "new-" + "ob" + "jec" + "t")
tlist("(('a@b').\"split\"('@'))", ps_split("a@b", "@"))
text("('AB').\"replace\"(('A'),[char](97))", "AB".replace("A", chr(97)))


def main() -> None:
    out = os.path.join(
        os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
        "crates", "core", "fixtures", "fold_cases.json",
    )
    with open(out, "w") as fh:
        json.dump(CASES, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    print(f"wrote {len(CASES)} cases to {out}")


if __name__ == "__main__":
    main()
