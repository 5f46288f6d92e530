from typing import Optional


class UqcalException(Exception):
    pass


class DataException(UqcalException):
    pass


class ConfigException(UqcalException):
    pass


class ListsNotEqualException(DataException):
    pass


class EnsembleTooSmallException(DataException):
    pass


class NonFiniteValueException(DataException):
    pass


class EmptyInputException(DataException):
    pass


class AxisMismatchException(DataException):
    pass


class SplitException(DataException):
    pass


class ParseException(DataException):
    """
    Ошибка разбора файла. row - номер строки данных, начиная с 1
    (строки комментариев и заголовок не считаются).
    """

    def __init__(self, message: str, path=None, row: Optional[int] = None):
        self.path = path
        self.row = row
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


def to_lists_of_dicts(**kwargs):
    """
    Превращает именованные колонки одинаковой длины в список словарей-строк.
        to_lists_of_dicts(a=[1, 2], b=[3, 4]) -> [{'a': 1, 'b': 3}, {'a': 2, 'b': 4}]
    """
    check_lengths(*(len(column) for column in kwargs.values()))
    names = list(kwargs)
    if not names:
        return []
    return [
        {name: kwargs[name][i] for name in names}
        for i in range(len(kwargs[names[0]]))
    ]


def check_lengths(*lengths):
    if len(set(lengths)) > 1:
        raise ListsNotEqualException(f"Lengths are {lengths}")
    return True


def check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ConfigException(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)
