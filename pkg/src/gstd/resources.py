"""Bundled gendered-pair lexicons and default prompt exemplars for ES/IT.

The lexicons double as the default allowed-edit list for the reformulation
validator and as the substitution table of the mock chat backend. Exemplars
are generated from sentence pairs so each source is available in both
directions, which the combined both-forms prompt needs.
"""

from __future__ import annotations

from .corpus import GenderForm, Lang

# (masculine, feminine) word pairs, speaker-referential vocabulary.
GENDER_PAIRS: dict[Lang, tuple[tuple[str, str], ...]] = {
    Lang.ES: (
        ("profesor", "profesora"),
        ("doctor", "doctora"),
        ("escritor", "escritora"),
        ("director", "directora"),
        ("señor", "señora"),
        ("maestro", "maestra"),
        ("médico", "médica"),
        ("abogado", "abogada"),
        ("ingeniero", "ingeniera"),
        ("enfermero", "enfermera"),
        ("cocinero", "cocinera"),
        ("cansado", "cansada"),
        ("ocupado", "ocupada"),
        ("casado", "casada"),
        ("seguro", "segura"),
        ("contento", "contenta"),
        ("listo", "lista"),
        ("solo", "sola"),
        ("viejo", "vieja"),
        ("alto", "alta"),
    ),
    Lang.IT: (
        ("professore", "professoressa"),
        ("dottore", "dottoressa"),
        ("scrittore", "scrittrice"),
        ("direttore", "direttrice"),
        ("signore", "signora"),
        ("maestro", "maestra"),
        ("medico", "medica"),
        ("avvocato", "avvocata"),
        ("ingegnere", "ingegnera"),
        ("infermiere", "infermiera"),
        ("cuoco", "cuoca"),
        ("stanco", "stanca"),
        ("occupato", "occupata"),
        ("sposato", "sposata"),
        ("sicuro", "sicura"),
        ("contento", "contenta"),
        ("pronto", "pronta"),
        ("solo", "sola"),
        ("vecchio", "vecchia"),
        ("alto", "alta"),
    ),
}

# (masculine sentence, feminine sentence, masculine word, feminine word)
_EXEMPLAR_SENTENCES: dict[Lang, tuple[tuple[str, str, str, str], ...]] = {
    Lang.ES: (
        ("soy profesor", "soy profesora", "profesor", "profesora"),
        ("soy doctor en física", "soy doctora en física", "doctor", "doctora"),
        ("estoy cansado hoy", "estoy cansada hoy", "cansado", "cansada"),
        ("estoy muy ocupado ahora", "estoy muy ocupada ahora", "ocupado", "ocupada"),
        ("estoy casado desde 2010", "estoy casada desde 2010", "casado", "casada"),
        ("estoy seguro de eso", "estoy segura de eso", "seguro", "segura"),
        ("soy escritor de novelas", "soy escritora de novelas", "escritor", "escritora"),
        ("trabajo como enfermero", "trabajo como enfermera", "enfermero", "enfermera"),
        ("me siento solo a veces", "me siento sola a veces", "solo", "sola"),
        ("estoy listo para salir", "estoy lista para salir", "listo", "lista"),
        ("soy ingeniero de software", "soy ingeniera de software", "ingeniero", "ingeniera"),
        ("ella es doctora y yo soy maestro", "ella es doctora y yo soy maestra",
         "maestro", "maestra"),
    ),
    Lang.IT: (
        ("sono professore", "sono professoressa", "professore", "professoressa"),
        ("sono dottore in fisica", "sono dottoressa in fisica", "dottore", "dottoressa"),
        ("sono stanco oggi", "sono stanca oggi", "stanco", "stanca"),
        ("sono molto occupato adesso", "sono molto occupata adesso", "occupato", "occupata"),
        ("sono sposato dal 2010", "sono sposata dal 2010", "sposato", "sposata"),
        ("sono sicuro di questo", "sono sicura di questo", "sicuro", "sicura"),
        ("sono scrittore di romanzi", "sono scrittrice di romanzi", "scrittore", "scrittrice"),
        ("lavoro come infermiere", "lavoro come infermiera", "infermiere", "infermiera"),
        ("mi sento solo a volte", "mi sento sola a volte", "solo", "sola"),
        ("sono pronto per uscire", "sono pronta per uscire", "pronto", "pronta"),
        ("sono ingegnere informatico", "sono ingegnera informatica", "ingegnere", "ingegnera"),
        ("lei è dottoressa e io sono maestro", "lei è dottoressa e io sono maestra",
         "maestro", "maestra"),
    ),
}


def default_exemplars(lang: Lang):
    """Both-direction exemplars with reasoning lines, for few-shot prompts."""
    from .reformulate import Exemplar

    out = []
    for masc_sent, femi_sent, masc_word, femi_word in _EXEMPLAR_SENTENCES[lang]:
        out.append(Exemplar(
            source_translation=masc_sent,
            target_gender=GenderForm.FEMININE,
            rewritten=femi_sent,
            reasoning=(
                f'"{masc_word}" refers to the speaker; its feminine form is '
                f'"{femi_word}"; every other word stays unchanged.'
            ),
        ))
        out.append(Exemplar(
            source_translation=femi_sent,
            target_gender=GenderForm.MASCULINE,
            rewritten=masc_sent,
            reasoning=(
                f'"{femi_word}" refers to the speaker; its masculine form is '
                f'"{masc_word}"; every other word stays unchanged.'
            ),
        ))
    return out
