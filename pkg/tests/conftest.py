import pytest

from morphproj.corpus import MorphTag, Sentence, Token


def T(text):
    return MorphTag.parse(text)


def conllu_line(i, form, upos="_", feats="_"):
    return f"{i}\t{form}\t_\t{upos}\t_\t{feats}\t_\t_\t_\t_"


def tagged(words_and_tags):
    return Sentence([Token(w, gold=T(t)) for w, t in words_and_tags])


@pytest.fixture
def small_conllu():
    return "\n".join([
        "# sent_id = s1",
        conllu_line(1, "Der", "DET", "Case=Nom|Definite=Def"),
        conllu_line(2, "Hund", "NOUN", "Number=Sing|Case=Nom"),
        "",
        "# sent_id = s2",
        "1-2\tzum\t_\t_\t_\t_\t_\t_\t_\t_",
        conllu_line(1, "zu", "ADP"),
        conllu_line(2, "dem", "DET", "Case=Dat"),
        "2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_",
        conllu_line(3, "Haus", "NOUN", "Number=Sing"),
        "",
    ]) + "\n"


ACCEPTANCE = []


def record(number, title, passed, detail):
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    line = f"AC{number:<2} {status}  {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l[2:4])):
            terminalreporter.write_line(line)
